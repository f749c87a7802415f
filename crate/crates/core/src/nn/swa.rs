use crate::error::{Error, Result};

/// Running Cesàro mean of parameter snapshots from `start_step` onward.
#[derive(Clone, Debug, PartialEq)]
pub struct SwaAccumulator {
    pub sum: Vec<Vec<f64>>,
    pub count: usize,
    /// First step whose snapshot is included.
    pub start_step: usize,
}

impl SwaAccumulator {
    pub fn new(start_step: usize) -> Self {
        SwaAccumulator {
            sum: Vec::new(),
            count: 0,
            start_step,
        }
    }

    /// Adds the snapshot taken after `step`; snapshots before the start
    /// step are ignored. Returns whether the snapshot was included.
    pub fn update(&mut self, step: usize, params: &[Vec<f64>]) -> Result<bool> {
        if step < self.start_step {
            return Ok(false);
        }
        if self.count == 0 {
            self.sum = params.to_vec();
        } else {
            if params.len() != self.sum.len()
                || params.iter().zip(&self.sum).any(|(p, s)| p.len() != s.len())
            {
                return Err(Error::shape("swa_update", "snapshot shapes changed"));
            }
            for (s, p) in self.sum.iter_mut().zip(params) {
                for (a, b) in s.iter_mut().zip(p) {
                    *a += b;
                }
            }
        }
        self.count += 1;
        Ok(true)
    }

    pub fn average(&self) -> Result<Vec<Vec<f64>>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument(
                "stochastic weight average has no snapshots".into(),
            ));
        }
        let n = self.count as f64;
        Ok(self
            .sum
            .iter()
            .map(|s| s.iter().map(|v| v / n).collect())
            .collect())
    }
}
