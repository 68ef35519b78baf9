use serde::{Deserialize, Serialize};

use crate::lattice::CouplingMode;

/// Provenance of a magnetization time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SeriesMeta {
    pub n_spins: usize,
    pub l: usize,
    pub lambda: f64,
    pub seed: u64,
    pub coupling_mode: CouplingMode,
}

/// Sampled expectation values on an ascending time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: SeriesMeta,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        Self {
            times,
            values,
            meta: SeriesMeta::default(),
        }
    }

    pub fn with_meta(mut self, meta: SeriesMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Builds a series by sampling `f` on `times`.
    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let values = times.iter().map(|&t| f(t)).collect();
        Self::new(times, values)
    }

    /// Copy with the time axis rescaled, `t -> s t`.
    pub fn rescaled_time(&self, s: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t * s).collect(),
            values: self.values.clone(),
            meta: self.meta,
        }
    }

    /// Linear interpolation; clamps outside the sampled range.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        assert!(n > 0);
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&x| x <= t);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Uniform grid `0, dt, ..., n dt`.
    pub fn uniform_grid(dt: f64, n_steps: usize) -> Vec<f64> {
        (0..=n_steps).map(|k| k as f64 * dt).collect()
    }

    /// Parses the output of [`TimeSeries::to_csv`].
    pub fn from_csv(text: &str) -> crate::Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("t,sz_sys") {
            return Err(crate::Error::InvalidParameter("series CSV lacks the t,sz_sys header".into()));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (k, line) in lines.enumerate() {
            let bad = || crate::Error::InvalidParameter(format!("series CSV line {}: {line:?}", k + 2));
            let (t, v) = line.split_once(',').ok_or_else(bad)?;
            times.push(t.parse().map_err(|_| bad())?);
            values.push(v.parse().map_err(|_| bad())?);
        }
        Ok(Self::new(times, values))
    }

    /// CSV with a `t,value` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,sz_sys\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Weighted sum of series sampled on the same grid.
pub fn weighted_sum(parts: &[(f64, &TimeSeries)]) -> TimeSeries {
    assert!(!parts.is_empty());
    let times = parts[0].1.times.clone();
    let mut values = vec![0.0; times.len()];
    for (w, s) in parts {
        assert_eq!(s.times, times, "series on different grids");
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += w * v;
        }
    }
    TimeSeries::new(times, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let s = TimeSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 2.0]);
        assert_eq!(s.value_at(0.5), 2.0);
        assert_eq!(s.value_at(1.5), 2.5);
        assert_eq!(s.value_at(5.0), 2.0);
        assert_eq!(s.value_at(-1.0), 1.0);
    }

    #[test]
    fn weighted() {
        let a = TimeSeries::new(vec![0.0, 1.0], vec![1.0, 0.0]);
        let b = TimeSeries::new(vec![0.0, 1.0], vec![0.0, 1.0]);
        let s = weighted_sum(&[(0.25, &a), (0.75, &b)]);
        assert_eq!(s.values, vec![0.25, 0.75]);
    }
}
