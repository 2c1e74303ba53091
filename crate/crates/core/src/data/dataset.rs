use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::rng::seeded;
use crate::numerics::Tensor;

/// Labelled image collection. Images are `[N, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[0] == 0 {
            return Err(Error::shape("dataset images [N, C, H, W]", &[1, 1, 1, 1], shape));
        }
        if shape[0] != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-sample shape `[C, H, W]`.
    pub fn image_shape(&self) -> Vec<usize> {
        self.images.shape()[1..].to_vec()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.name.clone(), images, labels, self.num_classes)
    }

    /// Same images, different labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Dataset::new(self.name.clone(), self.images.clone(), labels, self.num_classes)
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Deterministic 5:1 train/test split by seeded permutation.
    pub fn split(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.len() < 2 {
            return Err(Error::InvalidArgument("cannot split fewer than 2 samples".into()));
        }
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut seeded(seed));
        let test_len = (self.len() / 6).max(1);
        let (test, train) = perm.split_at(test_len);
        Ok((self.subset(train)?, self.subset(test)?))
    }

    /// Labels stripped; the only view the GAN training path receives.
    pub fn images_only(&self) -> ImageSet {
        ImageSet {
            images: self.images.clone(),
        }
    }

    /// SHA-256 over shape, pixels and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.images.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.images.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        for l in &self.labels {
            h.update((*l as u64).to_le_bytes());
        }
        h.update((self.num_classes as u64).to_le_bytes());
        hex(&h.finalize())
    }

    /// Area-averaging resize of every image to `side × side`.
    pub fn resized(&self, side: usize) -> Result<Self> {
        let [n, c, h, w] = self.images.shape() else {
            unreachable!()
        };
        let (n, c, h, w) = (*n, *c, *h, *w);
        if side == 0 {
            return Err(Error::InvalidArgument("resize target must be positive".into()));
        }
        if (h, w) == (side, side) {
            return Ok(self.clone());
        }
        let src = self.images.data();
        let mut out = vec![0.0f32; n * c * side * side];
        let wy = axis_weights(h, side);
        let wx = axis_weights(w, side);
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * side * side..(p + 1) * side * side];
            for (oy, ry) in wy.iter().enumerate() {
                for (ox, rx) in wx.iter().enumerate() {
                    let mut acc = 0.0f64;
                    for &(iy, fy) in ry {
                        for &(ix, fx) in rx {
                            acc += plane[iy * w + ix] as f64 * fy * fx;
                        }
                    }
                    dst[oy * side + ox] = (acc as f32).clamp(0.0, 1.0);
                }
            }
        }
        Dataset::new(
            self.name.clone(),
            Tensor::new([n, c, side, side], out)?,
            self.labels.clone(),
            self.num_classes,
        )
    }
}

/// For each output cell, the input cells it overlaps and their normalised weights.
fn axis_weights(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut cells = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < input {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((i, overlap / scale));
                }
                i += 1;
            }
            cells
        })
        .collect()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Images without labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    images: Tensor,
}

impl ImageSet {
    pub fn new(images: Tensor) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] == 0 {
            return Err(Error::shape("image set [N, C, H, W]", &[1, 1, 1, 1], images.shape()));
        }
        Ok(Self { images })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn image_shape(&self) -> Vec<usize> {
        self.images.shape()[1..].to_vec()
    }
}
