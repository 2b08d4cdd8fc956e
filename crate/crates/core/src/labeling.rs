use crate::error::{Error, Result};

/// Integer label image: 0 is background, `u >= 1` is a cell identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabeling {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    /// Number of cell identities the labels are drawn from (`1..=count`).
    count: usize,
}

impl InstanceLabeling {
    pub fn empty(width: usize, height: usize, count: usize) -> Self {
        InstanceLabeling {
            width,
            height,
            labels: vec![0; width * height],
            count,
        }
    }

    /// `count` defaults to the largest label present.
    pub fn from_vec(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::BadTensor {
                shape: vec![height, width],
                expected: width * height,
                actual: labels.len(),
            });
        }
        let count = labels.iter().copied().max().unwrap_or(0) as usize;
        Ok(InstanceLabeling {
            width,
            height,
            labels,
            count,
        })
    }

    pub fn with_count(mut self, count: usize) -> Result<Self> {
        if self.labels.iter().any(|&l| l as usize > count) {
            return Err(Error::InvalidArgument(format!("labels exceed cell count {count}")));
        }
        self.count = count;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }

    /// Sorted distinct nonzero labels.
    pub fn distinct(&self) -> Vec<u32> {
        let mut seen = vec![false; self.labels.iter().copied().max().unwrap_or(0) as usize + 1];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..seen.len() as u32).filter(|&l| seen[l as usize]).collect()
    }

    /// Pixel count per label, indexed by label (index 0 is background).
    pub fn areas(&self) -> Vec<usize> {
        let mut a = vec![0; self.labels.iter().copied().max().unwrap_or(0) as usize + 1];
        for &l in &self.labels {
            a[l as usize] += 1;
        }
        a
    }

    pub fn mask(&self, label: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    /// Mean pixel position `(x, y)` of each nonzero label, in label order.
    pub fn centroids(&self) -> Vec<(u32, f64, f64)> {
        let n = self.labels.iter().copied().max().unwrap_or(0) as usize + 1;
        let mut acc = vec![(0.0, 0.0, 0usize); n];
        for (i, &l) in self.labels.iter().enumerate() {
            let e = &mut acc[l as usize];
            e.0 += (i % self.width) as f64;
            e.1 += (i / self.width) as f64;
            e.2 += 1;
        }
        acc.iter()
            .enumerate()
            .skip(1)
            .filter(|(_, e)| e.2 > 0)
            .map(|(l, e)| (l as u32, e.0 / e.2 as f64, e.1 / e.2 as f64))
            .collect()
    }

    /// Pairs of distinct labels that share a 4-neighbour edge.
    pub fn touching_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let a = self.get(x, y);
                if a == 0 {
                    continue;
                }
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx < self.width && ny < self.height {
                        let b = self.get(nx, ny);
                        if b != 0 && b != a {
                            pairs.push((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}
