//! Piecewise-constant time schedules.
//!
//! A schedule is an ordered list of `(bucket_start, value)` pairs. The value of
//! bucket `k` applies on `[start_k, start_{k+1})`; the last bucket extends to
//! infinity and the first one is extended flat to the left. Integrals are
//! closed-form bucket sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "Vec<(f64, f64)>")]
pub struct Schedule {
    starts: Vec<f64>,
    values: Vec<f64>,
}

/// Accepted input forms: a bare number (flat from t = 0) or
/// `[[start, value], …]` pairs.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScheduleRepr {
    Flat(f64),
    Pairs(Vec<(f64, f64)>),
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = Error;

    fn try_from(repr: ScheduleRepr) -> Result<Self> {
        match repr {
            ScheduleRepr::Flat(v) => Schedule::new(vec![(0.0, v)]),
            ScheduleRepr::Pairs(pairs) => Schedule::new(pairs),
        }
    }
}

impl Schedule {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidSchedule("schedule has no buckets".into()));
        }
        let mut starts = Vec::with_capacity(pairs.len());
        let mut values = Vec::with_capacity(pairs.len());
        for (k, (start, value)) in pairs.into_iter().enumerate() {
            if !start.is_finite() || !value.is_finite() {
                return Err(Error::InvalidSchedule(format!(
                    "bucket {k} is not finite ({start}, {value})"
                )));
            }
            if let Some(&prev) = starts.last() {
                if start <= prev {
                    return Err(Error::InvalidSchedule(format!(
                        "bucket starts must be strictly increasing ({prev} then {start})"
                    )));
                }
            }
            starts.push(start);
            values.push(value);
        }
        Ok(Self { starts, values })
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![(0.0, value)]).expect("constant schedule must be finite")
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.starts.iter().copied().zip(self.values.iter().copied())
    }

    pub fn first_start(&self) -> f64 {
        self.starts[0]
    }

    fn bucket(&self, t: f64) -> usize {
        // index of the last start <= t, clamped to 0
        self.starts.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.bucket(t)]
    }

    /// Exact integral over `[t1, t2]`.
    pub fn integral(&self, t1: f64, t2: f64) -> Result<f64> {
        if t1 > t2 {
            return Err(Error::InvalidInterval { t1, t2 });
        }
        Ok(self.integral_unchecked(t1, t2))
    }

    pub(crate) fn integral_unchecked(&self, t1: f64, t2: f64) -> f64 {
        if t1 >= t2 {
            return 0.0;
        }
        let mut k = self.bucket(t1);
        let mut lo = t1;
        let mut acc = 0.0;
        loop {
            let hi = match self.starts.get(k + 1) {
                Some(&next) if next < t2 => next,
                _ => t2,
            };
            acc += self.values[k] * (hi - lo);
            if hi >= t2 {
                return acc;
            }
            lo = hi;
            k += 1;
        }
    }

    /// Values of every bucket that intersects `[t1, t2]`.
    pub fn values_on(&self, t1: f64, t2: f64) -> impl Iterator<Item = f64> + '_ {
        let first = self.bucket(t1);
        (first..self.values.len())
            .take_while(move |&k| k == first || self.starts[k] <= t2)
            .map(move |k| self.values[k])
    }

    pub fn sup_abs_on(&self, t1: f64, t2: f64) -> f64 {
        self.values_on(t1, t2).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_on(&self, t1: f64, t2: f64) -> f64 {
        self.values_on(t1, t2).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_on(&self, t1: f64, t2: f64) -> f64 {
        self.values_on(t1, t2).fold(f64::INFINITY, f64::min)
    }

    /// Pointwise combination on the union of both breakpoint sets.
    pub fn zip_with(&self, other: &Schedule, f: impl Fn(f64, f64) -> f64) -> Result<Schedule> {
        let mut starts: Vec<f64> = self.starts.iter().chain(&other.starts).copied().collect();
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let pairs = starts
            .into_iter()
            .map(|s| (s, f(self.value_at(s), other.value_at(s))))
            .collect();
        Schedule::new(pairs)
    }

    pub fn plus(&self, other: &Schedule) -> Schedule {
        self.zip_with(other, |a, b| a + b)
            .expect("sum of finite schedules is finite")
    }
}

impl TryFrom<Vec<(f64, f64)>> for Schedule {
    type Error = Error;

    fn try_from(pairs: Vec<(f64, f64)>) -> Result<Self> {
        Schedule::new(pairs)
    }
}

impl From<Schedule> for Vec<(f64, f64)> {
    fn from(s: Schedule) -> Self {
        s.pairs().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bucket() -> Schedule {
        Schedule::new(vec![(0.0, 0.01), (1.0, 0.03)]).unwrap()
    }

    #[test]
    fn lookup_uses_right_open_buckets() {
        let s = two_bucket();
        assert_eq!(s.value_at(0.0), 0.01);
        assert_eq!(s.value_at(0.999), 0.01);
        assert_eq!(s.value_at(1.0), 0.03);
        assert_eq!(s.value_at(7.0), 0.03);
        assert_eq!(s.value_at(-1.0), 0.01);
    }

    #[test]
    fn integral_sums_buckets() {
        let s = two_bucket();
        assert!((s.integral(0.0, 2.0).unwrap() - 0.04).abs() < 1e-15);
        assert!((s.integral(0.5, 1.5).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(s.integral(1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            s.integral(2.0, 1.0),
            Err(Error::InvalidInterval { .. })
        ));
    }

    #[test]
    fn rejects_unordered_and_empty() {
        assert!(Schedule::new(vec![]).is_err());
        assert!(Schedule::new(vec![(1.0, 0.0), (0.5, 0.0)]).is_err());
        assert!(Schedule::new(vec![(0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn sup_on_window() {
        let s = Schedule::new(vec![(0.0, -0.01), (1.0, 0.05), (2.0, 0.5)]).unwrap();
        assert_eq!(s.sup_abs_on(0.0, 1.5), 0.05);
        assert_eq!(s.min_on(0.0, 1.5), -0.01);
        assert_eq!(s.sup_abs_on(0.0, 0.5), 0.01);
        assert_eq!(s.max_on(0.0, 3.0), 0.5);
    }

    #[test]
    fn zip_merges_breakpoints() {
        let a = two_bucket();
        let b = Schedule::new(vec![(0.0, 1.0), (0.5, 2.0)]).unwrap();
        let c = a.plus(&b);
        assert_eq!(c.value_at(0.25), 1.01);
        assert_eq!(c.value_at(0.75), 2.01);
        assert_eq!(c.value_at(1.5), 2.03);
    }

    #[test]
    fn serde_pairs() {
        let s: Schedule = serde_json::from_str("[[0.0, 0.01], [1.0, 0.03]]").unwrap();
        assert_eq!(s, two_bucket());
        assert!(serde_json::from_str::<Schedule>("[[1.0, 0.0], [0.0, 0.0]]").is_err());
        let flat: Schedule = serde_json::from_str("0.02").unwrap();
        assert_eq!(flat, Schedule::constant(0.02));
        assert_eq!(serde_json::to_string(&flat).unwrap(), "[[0.0,0.02]]");
    }
}
