//! r-variation, jump counts, entropy numbers, the FTC variation bound and the
//! continuous square function.

use std::io::{Read, Write};

use thiserror::Error;

use crate::signal::{bilinear_average, log_integral, Func, SignalError, C64};

#[derive(Debug, Error)]
pub enum VariationError {
    #[error("r = {0} < 1")]
    RBelowOne(f64),
    #[error("times are not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("{0} times but {1} values")]
    LengthMismatch(usize, usize),
    #[error("ψ is not mean zero: |ψ̂(0)| = {0:e}")]
    NotMeanZero(f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed path: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<C64>,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<C64>) -> Result<Self, VariationError> {
        if times.len() != values.len() {
            return Err(VariationError::LengthMismatch(times.len(), values.len()));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(VariationError::NotIncreasing(i + 1));
        }
        Ok(SampledPath { times, values })
    }

    /// Values at times `0, 1, 2, …`.
    pub fn from_values(values: Vec<C64>) -> Self {
        let times = (0..values.len()).map(|i| i as f64).collect();
        SampledPath { times, values }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self::from_values(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sub-path with times in `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> SampledPath {
        let (t, v) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= a && **t <= b)
            .map(|(t, v)| (*t, *v))
            .unzip();
        SampledPath { times: t, values: v }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), VariationError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "re", "im"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            wtr.write_record([t.to_string(), v.re.to_string(), v.im.to_string()])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self, VariationError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64, VariationError> {
                rec.get(i)
                    .ok_or_else(|| VariationError::Malformed("missing column".into()))?
                    .trim()
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| VariationError::Malformed(e.to_string()))
            };
            times.push(f(0)?);
            values.push(C64::new(f(1)?, f(2)?));
        }
        Self::new(times, values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationResult {
    pub r: f64,
    pub value: f64,
    pub witness: Vec<usize>,
}

impl VariationResult {
    pub fn write_csv(&self, w: impl Write) -> Result<(), VariationError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["r", "value", "witness"])?;
        let wit: Vec<String> = self.witness.iter().map(|i| i.to_string()).collect();
        wtr.write_record([self.r.to_string(), self.value.to_string(), wit.join(" ")])?;
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// `(Σ |a_{i_k} − a_{i_{k−1}}|^r)^{1/r}` along an index sequence.
pub fn variation_sum(values: &[C64], idx: &[usize], r: f64) -> f64 {
    idx.windows(2)
        .map(|w| (values[w[1]] - values[w[0]]).norm().powf(r))
        .sum::<f64>()
        .powf(1.0 / r)
}

/// Exact `V^r` by dynamic programming over the last chosen index.
pub fn variation_norm(path: &SampledPath, r: f64) -> Result<VariationResult, VariationError> {
    variation_of(path.values(), r)
}

pub fn variation_of(a: &[C64], r: f64) -> Result<VariationResult, VariationError> {
    if !(r >= 1.0) {
        return Err(VariationError::RBelowOne(r));
    }
    let n = a.len();
    if n == 0 {
        return Ok(VariationResult {
            r,
            value: 0.0,
            witness: vec![],
        });
    }
    let mut best = vec![0.0f64; n];
    let mut back = vec![usize::MAX; n];
    for i in 1..n {
        for j in 0..i {
            let c = best[j] + (a[i] - a[j]).norm().powf(r);
            if c > best[i] {
                best[i] = c;
                back[i] = j;
            }
        }
    }
    let mut end = 0;
    for i in 1..n {
        if best[i] > best[end] {
            end = i;
        }
    }
    let mut witness = vec![end];
    while back[*witness.last().unwrap()] != usize::MAX {
        witness.push(back[*witness.last().unwrap()]);
    }
    witness.reverse();
    let value = variation_sum(a, &witness, r);
    Ok(VariationResult { r, value, witness })
}

/// Maximal `N` with `s₁ < t₁ ≤ s₂ < t₂ ≤ … ` and `|a_{t_i} − a_{s_i}| > λ`.
///
/// Each jump is committed to end as early as possible, which is optimal for
/// the interleaving constraint.
pub fn jump_count(path: &SampledPath, lambda: f64) -> usize {
    jumps_of(path.values(), lambda)
}

pub fn jumps_of(a: &[C64], lambda: f64) -> usize {
    let n = a.len();
    let mut start = 0;
    let mut count = 0;
    let mut t = start + 1;
    while t < n {
        if (start..t).any(|s| (a[t] - a[s]).norm() > lambda) {
            count += 1;
            start = t;
        }
        t += 1;
    }
    count
}

/// Smallest number of closed intervals of length `2λ` covering `points`.
pub fn entropy_count(points: &[f64], lambda: f64) -> usize {
    let mut p: Vec<f64> = points.to_vec();
    p.sort_by(f64::total_cmp);
    let mut count = 0;
    let mut reach = f64::NEG_INFINITY;
    for x in p {
        if x > reach {
            count += 1;
            reach = x + 2.0 * lambda;
        }
    }
    count
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FtcCheck {
    pub lhs: f64,
    pub rhs: f64,
}

/// Both sides of `‖a‖²_{V^r([2^s,2^{s+1}])} ≤ C (∫|a|² dt/t)^{1/r′} (∫|t a′|² dt/t)^{1/r}`
/// (right side without `C`). Derivatives default to finite differences.
pub fn ftc_variation_check(
    path: &SampledPath,
    deriv: Option<&[C64]>,
    r: f64,
    s: i32,
) -> Result<FtcCheck, VariationError> {
    if !(r >= 1.0) {
        return Err(VariationError::RBelowOne(r));
    }
    let lo = 2f64.powi(s);
    let hi = 2.0 * lo;
    let t = path.times();
    let a = path.values();
    let fd: Vec<C64>;
    let d = match deriv {
        Some(d) => {
            if d.len() != a.len() {
                return Err(VariationError::LengthMismatch(a.len(), d.len()));
            }
            d
        }
        None => {
            fd = finite_difference(t, a);
            &fd
        }
    };
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] >= lo && t[i] <= hi).collect();
    let sub: Vec<C64> = idx.iter().map(|&i| a[i]).collect();
    let v = variation_of(&sub, r)?.value;
    let trap = |g: &dyn Fn(usize) -> f64| -> f64 {
        idx.windows(2)
            .map(|w| 0.5 * (g(w[0]) + g(w[1])) * (t[w[1]] - t[w[0]]))
            .sum()
    };
    let i1 = trap(&|i| a[i].norm_sqr() / t[i]);
    let i2 = trap(&|i| (d[i] * t[i]).norm_sqr() / t[i]);
    let rp = if r == 1.0 { f64::INFINITY } else { r / (r - 1.0) };
    let rhs = i1.powf(1.0 / rp) * i2.powf(1.0 / r);
    Ok(FtcCheck { lhs: v * v, rhs })
}

fn finite_difference(t: &[f64], a: &[C64]) -> Vec<C64> {
    let n = a.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                C64::new(0.0, 0.0)
            } else if i == 0 {
                (a[1] - a[0]) / (t[1] - t[0])
            } else if i == n - 1 {
                (a[n - 1] - a[n - 2]) / (t[n - 1] - t[n - 2])
            } else {
                (a[i + 1] - a[i - 1]) / (t[i + 1] - t[i - 1])
            }
        })
        .collect()
}

/// Log-uniform quadrature of `(∫_{t₀}^{t₁} |b(t)|² dt/t)^{1/2}`.
pub fn square_function_of(
    b: impl Fn(f64) -> Result<C64, SignalError>,
    t_range: (f64, f64),
    per_octave: usize,
) -> Result<f64, VariationError> {
    let octaves = (t_range.1 / t_range.0).log2();
    let n = ((octaves * per_octave as f64).ceil() as usize).max(2);
    let err = std::cell::RefCell::new(None);
    let v = log_integral(
        |t| match b(t) {
            Ok(z) => z.norm_sqr(),
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        t_range.0,
        t_range.1,
        n,
    );
    match err.into_inner() {
        Some(e) => Err(e.into()),
        None => Ok(v.sqrt()),
    }
}

/// `S(ψ, f₁, f₂)(x)` over a finite `t` range; the `y`-quadrature step is
/// `t·|supp ψ| / resolution`, so `resolution < 8` is rejected.
pub fn square_function(
    psi: &dyn Func,
    f1: &dyn Func,
    f2: &dyn Func,
    x: f64,
    t_range: (f64, f64),
    per_octave: usize,
    resolution: f64,
) -> Result<f64, VariationError> {
    let m = psi.hat(0.0).norm();
    if m > 1e-10 {
        return Err(VariationError::NotMeanZero(m));
    }
    let (lo, hi) = psi.support();
    square_function_of(
        |t| bilinear_average(psi, f1, f2, t, x, t * (hi - lo) / resolution),
        t_range,
        per_octave,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{cis, ClosureFunc, Zeta};

    fn re(v: &[f64]) -> Vec<C64> {
        v.iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    #[test]
    fn variation_examples() {
        let c = variation_of(&re(&[2.0; 5]), 2.0).unwrap();
        assert_eq!(c.value, 0.0);
        let v = variation_of(&re(&[0.0, 1.0, 0.0]), 2.0).unwrap();
        assert!((v.value - 2f64.sqrt()).abs() < 1e-15);
        let m = variation_of(&re(&[0.0, 1.0, 3.0]), 2.0).unwrap();
        assert_eq!(m.value, 3.0);
        assert_eq!(m.witness, vec![0, 2]);
        assert!(matches!(variation_of(&re(&[0.0]), 0.5), Err(VariationError::RBelowOne(_))));
    }

    #[test]
    fn jump_examples() {
        assert_eq!(jumps_of(&re(&[0.0, 2.0, 0.0, 2.0]), 1.0), 3);
        assert_eq!(jumps_of(&re(&[1.0; 4]), 0.5), 0);
        assert_eq!(jumps_of(&re(&[0.0, 0.5, 0.2]), 1.0), 0);
        // a later jump start beats restarting at the previous endpoint
        assert_eq!(jumps_of(&re(&[0.0, 5.0, 5.5, 4.4]), 1.0), 2);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_count(&[], 1.0), 0);
        assert_eq!(entropy_count(&[0.0, 0.5, 3.0], 1.0), 2);
        assert_eq!(entropy_count(&[7.0], 0.1), 1);
        assert_eq!(entropy_count(&[0.0, 2.0], 1.0), 1);
    }

    #[test]
    fn ftc_linear_path() {
        let n = 4001;
        let times: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / (n - 1) as f64).collect();
        let vals: Vec<C64> = times.iter().map(|&t| C64::new(t, 0.0)).collect();
        let d = vec![C64::new(1.0, 0.0); n];
        let p = SampledPath::new(times, vals).unwrap();
        let c = ftc_variation_check(&p, Some(&d), 1.0, 0).unwrap();
        assert!((c.lhs - 1.0).abs() < 1e-12);
        assert!((c.rhs - 1.5).abs() < 1e-6);
        let fd = ftc_variation_check(&p, None, 1.0, 0).unwrap();
        assert!((fd.rhs - c.rhs).abs() < 1e-9);
    }

    #[test]
    fn square_function_plane_wave() {
        let xi = 1.0;
        let wave = ClosureFunc::new(move |x| cis(xi * x), |_| C64::new(0.0, 0.0), (-1e9, 1e9));
        let one = ClosureFunc::new(|_| C64::new(1.0, 0.0), |_| C64::new(0.0, 0.0), (-1e9, 1e9));
        let z = Zeta::new();
        // |B_t| = |ζ̂(tξ)|, so quadrature of the closed form checks the t-integral
        let exact = square_function_of(|t| Ok(z.hat(t * xi)), (1e-4, 64.0), 128).unwrap();
        assert!((exact - 1.0).abs() < 1e-6, "{exact}");
        let s = square_function(&z, &wave, &one, 0.3, (1e-2, 16.0), 16, 4096.0).unwrap();
        let closed = square_function_of(|t| Ok(z.hat(t * xi)), (1e-2, 16.0), 16).unwrap();
        assert!((s - closed).abs() < 1e-6, "{s} {closed}");
        let zero = ClosureFunc::new(|_| C64::new(0.0, 0.0), |_| C64::new(0.0, 0.0), (0.0, 0.0));
        assert_eq!(square_function(&z, &zero, &one, 0.0, (0.1, 1.0), 8, 64.0).unwrap(), 0.0);
        assert!(square_function(&z, &wave, &one, 0.0, (0.1, 1.0), 8, 4.0).is_err());
    }

    #[test]
    fn path_csv_round_trip() {
        let p = SampledPath::new(vec![0.0, 0.5, 2.0], vec![C64::new(1.0, -1.0), C64::new(0.25, 0.0), C64::new(-3.0, 2.0)]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(SampledPath::read_csv(buf.as_slice()).unwrap(), p);
        assert!(SampledPath::new(vec![0.0, 0.0], vec![C64::new(0.0, 0.0); 2]).is_err());
    }
}
