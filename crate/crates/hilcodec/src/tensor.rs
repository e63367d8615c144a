//! Minimal batch × channels × time tensor and the elementwise activations.

use crate::error::{Error, Result};

/// Dense real-valued tensor with shape `batch × channels × time`.
///
/// Layout is row-major: `data[(b * channels + c) * time + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub data: Vec<f32>,
    pub batch: usize,
    pub channels: usize,
    pub time: usize,
}

impl Tensor3 {
    pub fn zeros(batch: usize, channels: usize, time: usize) -> Self {
        Tensor3 { data: vec![0.0; batch * channels * time], batch, channels, time }
    }

    pub fn from_vec(data: Vec<f32>, batch: usize, channels: usize, time: usize) -> Result<Self> {
        if data.len() != batch * channels * time {
            return Err(Error::shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                batch,
                channels,
                time
            )));
        }
        Ok(Tensor3 { data, batch, channels, time })
    }

    /// Single-batch, single-channel tensor from raw samples.
    pub fn from_samples(samples: &[f32]) -> Self {
        Tensor3 { data: samples.to_vec(), batch: 1, channels: 1, time: samples.len() }
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.channels + c) * self.time + t
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, t: usize) -> f32 {
        self.data[self.idx(b, c, t)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, v: f32) {
        let i = self.idx(b, c, t);
        self.data[i] = v;
    }

    /// Contiguous `time`-long row for one (batch, channel).
    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &[f32] {
        let start = (b * self.channels + c) * self.time;
        &self.data[start..start + self.time]
    }

    #[inline]
    pub fn row_mut(&mut self, b: usize, c: usize) -> &mut [f32] {
        let start = (b * self.channels + c) * self.time;
        &mut self.data[start..start + self.time]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor3 {
        Tensor3 {
            data: self.data.iter().map(|&x| f(x)).collect(),
            batch: self.batch,
            channels: self.channels,
            time: self.time,
        }
    }

    pub fn scale(&self, s: f32) -> Tensor3 {
        self.map(|x| x * s)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.batch != other.batch || self.channels != other.channels || self.time != other.time
        {
            return Err(Error::shape(format!(
                "add {}x{}x{} vs {}x{}x{}",
                self.batch, self.channels, self.time, other.batch, other.channels, other.time
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor3 { data, batch: self.batch, channels: self.channels, time: self.time })
    }

    /// Concatenate along the time axis.
    pub fn concat_time(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.batch != other.batch || self.channels != other.channels {
            return Err(Error::shape("concat_time: batch/channel mismatch"));
        }
        let time = self.time + other.time;
        let mut out = Tensor3::zeros(self.batch, self.channels, time);
        for b in 0..self.batch {
            for c in 0..self.channels {
                let row = out.row_mut(b, c);
                row[..self.time].copy_from_slice(self.row(b, c));
                row[self.time..].copy_from_slice(other.row(b, c));
            }
        }
        Ok(out)
    }

    /// Sub-range of the time axis, copied.
    pub fn slice_time(&self, start: usize, end: usize) -> Tensor3 {
        assert!(start <= end && end <= self.time);
        let time = end - start;
        let mut out = Tensor3::zeros(self.batch, self.channels, time);
        for b in 0..self.batch {
            for c in 0..self.channels {
                out.row_mut(b, c).copy_from_slice(&self.row(b, c)[start..end]);
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// ELU: `x` for `x >= 0`, `exp(x) - 1` otherwise.
pub fn elu(input: &Tensor3) -> Tensor3 {
    input.map(|x| if x >= 0.0 { x } else { x.exp_m1() })
}

/// In-place ELU, used on hot paths.
pub fn elu_inplace(input: &mut Tensor3) {
    for x in &mut input.data {
        if *x < 0.0 {
            *x = x.exp_m1();
        }
    }
}

/// Largest f32 strictly below 1.
const ONE_MINUS_ULP: f32 = f32::from_bits(0x3F7F_FFFF);

/// Hyperbolic tangent clip; output lies strictly inside (-1, 1).
///
/// `tanh` saturates to exactly 1.0 in f32 for large arguments, so the result
/// is clamped by one ulp to keep the open interval guarantee.
pub fn tanh_clip(input: &Tensor3) -> Tensor3 {
    input.map(|x| x.tanh().clamp(-ONE_MINUS_ULP, ONE_MINUS_ULP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_reference_points() {
        let t = Tensor3::from_samples(&[0.0, 1.0, -1.0]);
        let out = elu(&t);
        assert_eq!(out.data[0], 0.0);
        assert_eq!(out.data[1], 1.0);
        assert!((out.data[2] - (-0.632_120_6)).abs() < 1e-6);
    }

    #[test]
    fn tanh_reference_points() {
        let t = Tensor3::from_samples(&[0.0, 0.5, 100.0, -100.0]);
        let out = tanh_clip(&t);
        assert_eq!(out.data[0], 0.0);
        assert!((out.data[1] - 0.462_117_16).abs() < 1e-6);
        assert!(out.data[2] < 1.0 && out.data[2] > 0.999);
        assert!(out.data[3] > -1.0 && out.data[3] < -0.999);
    }

    #[test]
    fn layout_round_trip() {
        let mut t = Tensor3::zeros(2, 3, 4);
        t.set(1, 2, 3, 7.0);
        assert_eq!(t.get(1, 2, 3), 7.0);
        assert_eq!(t.row(1, 2)[3], 7.0);
        assert_eq!(t.idx(1, 2, 3), t.data.len() - 1);
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor3::from_vec((0..6).map(|x| x as f32).collect(), 1, 2, 3).unwrap();
        let b = Tensor3::from_vec((6..10).map(|x| x as f32).collect(), 1, 2, 2).unwrap();
        let c = a.concat_time(&b).unwrap();
        assert_eq!(c.time, 5);
        assert_eq!(c.row(0, 0), &[0.0, 1.0, 2.0, 6.0, 7.0]);
        assert_eq!(c.row(0, 1), &[3.0, 4.0, 5.0, 8.0, 9.0]);
        let s = c.slice_time(1, 4);
        assert_eq!(s.row(0, 0), &[1.0, 2.0, 6.0]);
    }
}
