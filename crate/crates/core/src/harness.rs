//! Seeded experiments that emit CSV records, the ergodic double averages, and
//! the configuration format shared by the command-line tool.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::dyadic::{dyadic_time, enumerate_family, int, Dyadic, NuParams, RInterval, Rational, TriTile};
use crate::forest::{
    bessel_ratio, exceptional_ratio, family_scales, major_subset, random_family, random_set_triple, random_shifts,
    select_trees, size, synthetic_coefficient, threshold_set, ForestError, TileCoefficients, CALIBRATED_C0,
};
use crate::signal::{bilinear_average_spectral, cis, GridSignal, GridSpec, Indicator, SignalError, C64};
use crate::variation::{jumps_of, variation_of, VariationError};
use crate::wavepackets::{build_window, theta_bump, theta_leak, WaveError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("config key [{0}] {1} missing")]
    MissingKey(String, String),
    #[error("config key [{section}] {key}: cannot parse {value:?}")]
    BadValue { section: String, key: String, value: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// Defaults for every experiment. The growth-shape thresholds (`rate`,
/// `stability`) and the ergodic median thresholds are calibration choices.
pub const DEFAULT_CONFIG: &str = "\
[ergodic]
n = 4096
trials = 32
scales_short = 6
scales_long = 12
p = 2
growth_threshold = 1.2
bounded_threshold = 1.1
rotation_n = 256
rotation_theta = 0.1234567
rotation_nmax = 64
closed_form_tol = 1e-10

[short]
q = 4
n = 512
band = 2
octaves = -1, 0, 1
samples = 16
r = 2
p = 2
stability = 0.05

[growth]
q = 5
n = 1024
band = 8
m_max = 8
trials = 6
p1 = 4
p2 = 4
p_out = 2
s_min = -1
s_max = 3
rate = 0.1
stability = 0.1

[bessel]
m_max = 8
families = 8
tiles = 200
j = 3
rate = 0.1

[exceptional]
trials = 100
m_max = 4
l_cap = 30
measure_bound = 0.0833333333333333

[variation-oracle]
max_len = 8
paths = 1000
path_len = 24
";

/// Flat `key = value` text with `[section]` headers and `#` comments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    map: BTreeMap<(String, String), String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Config::default();
        cfg.overlay(text)?;
        Ok(cfg)
    }

    /// Built-in defaults.
    pub fn defaults() -> Self {
        Config::parse(DEFAULT_CONFIG).expect("default config parses")
    }

    /// Defaults overridden by the file contents.
    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Config::defaults();
        cfg.overlay(&text)?;
        Ok(cfg)
    }

    pub fn overlay(&mut self, text: &str) -> Result<(), HarnessError> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| HarnessError::Config { line: i + 1, msg: "unterminated section".into() })?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config { line: i + 1, msg: format!("expected key = value, got {line:?}") })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(HarnessError::Config { line: i + 1, msg: "empty key".into() });
            }
            self.map.insert((section.clone(), k.to_string()), v.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.map.insert((section.into(), key.into()), value.to_string());
    }

    pub fn raw(&self, section: &str, key: &str) -> Result<&str, HarnessError> {
        self.map
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
            .ok_or_else(|| HarnessError::MissingKey(section.into(), key.into()))
    }

    pub fn get<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T, HarnessError> {
        let v = self.raw(section, key)?;
        v.parse().map_err(|_| HarnessError::BadValue { section: section.into(), key: key.into(), value: v.into() })
    }

    pub fn get_list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>, HarnessError> {
        let v = self.raw(section, key)?;
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| HarnessError::BadValue { section: section.into(), key: key.into(), value: v.into() })
            })
            .collect()
    }

    /// Parameters of one section as a string map, for record metadata.
    pub fn section(&self, section: &str) -> BTreeMap<String, String> {
        self.map
            .iter()
            .filter(|((s, _), _)| s == section)
            .map(|((_, k), v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// One CSV row. `(experiment, params, seed, metric)` is the key.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub experiment: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl Record {
    pub fn new(experiment: &str, seed: u64, metric: &str, value: f64) -> Self {
        Record { experiment: experiment.into(), params: BTreeMap::new(), seed, metric: metric.into(), value }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }
}

/// Run metadata written as the first data row.
#[derive(Clone, Debug)]
pub struct Meta {
    pub grid: String,
    pub seed: u64,
}

impl Meta {
    pub fn describe(&self) -> String {
        format!("version={VERSION};grid={};c0={CALIBRATED_C0}", self.grid)
    }
}

pub fn grid_label(g: &GridSpec) -> String {
    format!("q={} n={} x0={}", g.q, g.n, g.x0)
}

/// Header `experiment,metric,seed,<sorted params>,value`, then a `meta` row,
/// then the records in the given order.
pub fn write_records(w: impl Write, meta: &Meta, records: &[Record]) -> Result<(), HarnessError> {
    let mut keys: Vec<&String> = records.iter().flat_map(|r| r.params.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["experiment".to_string(), "metric".into(), "seed".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.push("value".into());
    wtr.write_record(&header)?;
    let mut row = vec!["meta".to_string(), meta.describe(), meta.seed.to_string()];
    row.extend(keys.iter().map(|_| String::new()));
    row.push(String::new());
    wtr.write_record(&row)?;
    for r in records {
        let mut row = vec![r.experiment.clone(), r.metric.clone(), r.seed.to_string()];
        row.extend(keys.iter().map(|k| r.params.get(*k).cloned().unwrap_or_default()));
        row.push(format!("{:?}", r.value));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent stream for `(seed, experiment, trial)`.
pub fn trial_rng(seed: u64, experiment: &str, trial: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(experiment));
    r.set_stream(trial);
    r
}

fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var("TFA_LAB_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
        rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
    })
}

/// `f(0), …, f(n−1)` evaluated in parallel, returned in trial order.
pub fn run_trials<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    pool().install(|| (0..n).into_par_iter().map(&f).collect())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Least-squares slope of `ln y` against `x`.
pub fn exponential_rate(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// Dynamical systems

/// Measure-preserving invertible maps on a sampled space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DynSystem {
    /// `x ↦ x + 1 mod N` on `Z/NZ`.
    CyclicShift { n: usize },
    /// `x ↦ x + θ mod 1`, with functions given by their samples at `j/N`
    /// and read as trigonometric polynomials.
    CircleRotation { theta: f64, n: usize },
}

impl DynSystem {
    pub fn size(&self) -> usize {
        match *self {
            DynSystem::CyclicShift { n } | DynSystem::CircleRotation { n, .. } => n,
        }
    }
}

/// `M_n(f₁, f₂)(x) = (1/n) Σ_{i<n} f₁(T^i x) f₂(T^{−i} x)` for each `n` in `ns`
/// (increasing), by one running sum.
pub fn averages_at(sys: &DynSystem, f1: &[C64], f2: &[C64], ns: &[usize]) -> Result<Vec<Vec<C64>>, HarnessError> {
    let n = sys.size();
    if f1.len() != n || f2.len() != n {
        return Err(HarnessError::Invalid(format!("arrays of length {} and {} on a space of size {n}", f1.len(), f2.len())));
    }
    if ns.first() == Some(&0) || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Invalid("averaging lengths must be increasing and positive".into()));
    }
    match *sys {
        DynSystem::CyclicShift { .. } => Ok(cyclic_averages(f1, f2, ns)),
        DynSystem::CircleRotation { theta, .. } => Ok(rotation_averages(theta, f1, f2, ns)),
    }
}

/// All averages `M_1, …, M_{n_max}`.
pub fn double_recurrence(sys: &DynSystem, f1: &[C64], f2: &[C64], n_max: usize) -> Result<Vec<Vec<C64>>, HarnessError> {
    if n_max == 0 {
        return Err(HarnessError::Invalid("nMax must be at least 1".into()));
    }
    let ns: Vec<usize> = (1..=n_max).collect();
    averages_at(sys, f1, f2, &ns)
}

fn cyclic_averages(f1: &[C64], f2: &[C64], ns: &[usize]) -> Vec<Vec<C64>> {
    let n = f1.len();
    let mut acc = vec![C64::new(0.0, 0.0); n];
    let mut out = Vec::with_capacity(ns.len());
    let mut i = 0;
    for &target in ns {
        while i < target {
            let (a, b) = (i % n, (n - i % n) % n);
            for (x, s) in acc.iter_mut().enumerate() {
                *s += f1[(x + a) % n] * f2[(x + b) % n];
            }
            i += 1;
        }
        out.push(acc.iter().map(|s| s / target as f64).collect());
    }
    out
}

/// Fourier coefficients `c_k = N^{−1} Σ_j f_j e(−kj/N)` above `1e−13` of the largest.
fn trig_coefficients(f: &[C64]) -> Vec<(i64, C64)> {
    let n = f.len();
    let mut buf = f.to_vec();
    crate::signal::fft_inplace(&mut buf, false);
    let max = buf.iter().map(|z| z.norm()).fold(0.0, f64::max);
    buf.iter()
        .enumerate()
        .filter(|(_, z)| z.norm() > 1e-13 * max)
        .map(|(k, z)| {
            let k = if k >= n / 2 { k as i64 - n as i64 } else { k as i64 };
            (k, z / n as f64)
        })
        .collect()
}

fn rotation_averages(theta: f64, f1: &[C64], f2: &[C64], ns: &[usize]) -> Vec<Vec<C64>> {
    let n = f1.len();
    let c = trig_coefficients(f1);
    let d = trig_coefficients(f2);
    // f₁(x+iθ) f₂(x−iθ) = Σ c_k d_l e((k+l)x) e((k−l)iθ)
    let mut diffs: Vec<i64> = c.iter().flat_map(|&(k, _)| d.iter().map(move |&(l, _)| k - l)).collect();
    diffs.sort();
    diffs.dedup();
    let mut sums = vec![C64::new(0.0, 0.0); diffs.len()];
    let mut out = Vec::with_capacity(ns.len());
    let mut i = 0usize;
    for &target in ns {
        while i < target {
            for (s, &dd) in sums.iter_mut().zip(&diffs) {
                *s += cis((dd as f64 * i as f64 * theta).rem_euclid(1.0));
            }
            i += 1;
        }
        let mut row = vec![C64::new(0.0, 0.0); n];
        for &(k, ck) in &c {
            for &(l, dl) in &d {
                let idx = diffs.binary_search(&(k - l)).unwrap();
                let a = ck * dl * (sums[idx] / target as f64);
                let freq = (k + l).rem_euclid(n as i64) as usize;
                for (j, v) in row.iter_mut().enumerate() {
                    *v += a * cis(((freq * j) % n) as f64 / n as f64);
                }
            }
        }
        out.push(row);
    }
    out
}

/// `(1/n) Σ_{i<n} e(2δiθ)` in closed form, `δ = 1` for the pair `e(x)`, `e(−x)`.
pub fn rotation_geometric_mean(theta: f64, n: usize) -> C64 {
    let w = cis(2.0 * theta);
    if (w - 1.0).norm() < 1e-300 {
        return C64::new(1.0, 0.0);
    }
    (C64::new(1.0, 0.0) - w.powu(n as u32)) / ((C64::new(1.0, 0.0) - w) * n as f64)
}

/// Mean-conservation check on the cyclic group: the space average of `M_n`
/// against `(1/n) Σ_i mean(f₁(· + 2i) f₂)`, which rearranges the same sum.
pub fn mean_conservation_defect(f1: &[C64], f2: &[C64], n_avg: usize) -> Result<f64, HarnessError> {
    let n = f1.len();
    let sys = DynSystem::CyclicShift { n };
    let m = averages_at(&sys, f1, f2, &[n_avg])?.pop().unwrap();
    let lhs: C64 = m.iter().sum::<C64>() / n as f64;
    let mut rhs = C64::new(0.0, 0.0);
    for i in 0..n_avg {
        let shifted: Vec<C64> = (0..n).map(|y| f1[(y + 2 * i) % n]).collect();
        let prod = averages_at(&sys, &shifted, f2, &[1])?.pop().unwrap();
        rhs += prod.iter().sum::<C64>() / n as f64;
    }
    rhs /= n_avg as f64;
    Ok((lhs - rhs).norm())
}

/// `‖ ‖M_{2^k}(x)‖_{V^r_k} ‖_{L^p_x}` (normalized counting measure) using the
/// first `scales` lacunary lengths of `avgs`, which holds `M_{2^k}` at row `k`.
pub fn lacunary_variation(avgs: &[Vec<C64>], scales: usize, r: f64, p: f64) -> Result<f64, HarnessError> {
    let n = avgs[0].len();
    let mut acc = 0.0;
    for x in 0..n {
        let path: Vec<C64> = avgs[..scales].iter().map(|row| row[x]).collect();
        acc += variation_of(&path, r)?.value.powf(p);
    }
    Ok((acc / n as f64).powf(1.0 / p))
}

pub fn random_signs(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(if rng.random_bool(0.5) { 1.0 } else { -1.0 }, 0.0)).collect()
}

#[derive(Clone, Debug)]
pub struct ErgodicSummary {
    pub closed_form_error: f64,
    pub exp_pair_variation: f64,
    pub median_ratio_r2: f64,
    pub median_ratio_r21: f64,
    pub max_r3: f64,
    pub growth_threshold: f64,
    pub bounded_threshold: f64,
    pub closed_form_tol: f64,
}

impl ErgodicSummary {
    pub fn closed_forms_pass(&self) -> bool {
        self.closed_form_error <= self.closed_form_tol && self.exp_pair_variation == 0.0
    }

    pub fn contrast_pass(&self) -> bool {
        self.median_ratio_r2 > self.growth_threshold && self.median_ratio_r21 <= self.bounded_threshold
    }
}

/// Rotation closed forms plus the random-sign long-variation ensemble.
pub fn ergodic_experiment(cfg: &Config, seed: u64) -> Result<(Vec<Record>, ErgodicSummary), HarnessError> {
    const EXP: &str = "ergodic";
    let n: usize = cfg.get(EXP, "n")?;
    let trials: usize = cfg.get(EXP, "trials")?;
    let k_short: usize = cfg.get(EXP, "scales_short")?;
    let k_long: usize = cfg.get(EXP, "scales_long")?;
    let p: f64 = cfg.get(EXP, "p")?;
    let rn: usize = cfg.get(EXP, "rotation_n")?;
    let theta: f64 = cfg.get(EXP, "rotation_theta")?;
    let r_nmax: usize = cfg.get(EXP, "rotation_nmax")?;
    let mut records = Vec::new();

    let rot = DynSystem::CircleRotation { theta, n: rn };
    let e = |sign: f64| -> Vec<C64> { (0..rn).map(|j| cis(sign * j as f64 / rn as f64)).collect() };
    let conj = double_recurrence(&rot, &e(1.0), &e(-1.0), r_nmax)?;
    let mut closed = 0.0f64;
    for (i, row) in conj.iter().enumerate() {
        let want = rotation_geometric_mean(theta, i + 1);
        closed = row.iter().map(|z| (z - want).norm()).fold(closed, f64::max);
    }
    records.push(Record::new(EXP, seed, "rotation_closed_form_error", closed).param("theta", theta));
    let lac: Vec<usize> = (0..k_long).map(|k| 1usize << k).collect();
    let same = averages_at(&rot, &e(1.0), &e(1.0), &lac)?;
    let exp_var = lacunary_variation(&same, k_long, 2.0, p)?;
    records.push(Record::new(EXP, seed, "exp_pair_variation", exp_var).param("theta", theta));

    let sys = DynSystem::CyclicShift { n };
    let per_trial = run_trials(trials, |t| -> Result<[f64; 6], HarnessError> {
        let mut rng = trial_rng(seed, EXP, t as u64);
        let f1 = random_signs(&mut rng, n);
        let f2 = random_signs(&mut rng, n);
        let avgs = averages_at(&sys, &f1, &f2, &lac)?;
        let v = |k, r| lacunary_variation(&avgs, k, r, p);
        Ok([v(k_short, 2.0)?, v(k_long, 2.0)?, v(k_short, 2.1)?, v(k_long, 2.1)?, v(k_long, 3.0)?, 0.0])
    });
    let mut r2 = Vec::new();
    let mut r21 = Vec::new();
    let mut max_r3 = 0.0f64;
    for (t, res) in per_trial.into_iter().enumerate() {
        let v = res?;
        for (r, k, val) in [(2.0, k_short, v[0]), (2.0, k_long, v[1]), (2.1, k_short, v[2]), (2.1, k_long, v[3]), (3.0, k_long, v[4])] {
            records.push(
                Record::new(EXP, seed, "lacunary_variation", val)
                    .param("trial", t)
                    .param("r", r)
                    .param("scales", k)
                    .param("p", p),
            );
        }
        r2.push(v[1] / v[0]);
        r21.push(v[3] / v[2]);
        max_r3 = max_r3.max(v[4]);
    }
    let s = ErgodicSummary {
        closed_form_error: closed,
        exp_pair_variation: exp_var,
        median_ratio_r2: median(&r2),
        median_ratio_r21: median(&r21),
        max_r3,
        growth_threshold: cfg.get(EXP, "growth_threshold")?,
        bounded_threshold: cfg.get(EXP, "bounded_threshold")?,
        closed_form_tol: cfg.get(EXP, "closed_form_tol")?,
    };
    records.push(Record::new(EXP, seed, "median_ratio", s.median_ratio_r2).param("r", 2.0));
    records.push(Record::new(EXP, seed, "median_ratio", s.median_ratio_r21).param("r", 2.1));
    records.push(Record::new(EXP, seed, "max_value", max_r3).param("r", 3.0));
    Ok((records, s))
}

// ---------------------------------------------------------------------------
// Continuous averages

/// Complex Gaussian spectrum on `|ξ| ≤ band`, normalized to unit `L^p` on the grid.
pub fn random_bandlimited(rng: &mut impl Rng, grid: &GridSpec, band: f64, p: f64) -> GridSignal {
    let zero = grid.sample_fn(|_| C64::new(0.0, 0.0));
    let spec = zero.fourier();
    let vals: Vec<C64> = (0..spec.len())
        .map(|k| {
            if spec.x(k).abs() <= band {
                C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    let f = GridSignal::inverse_fourier(&spec.with_samples(vals), grid.x0);
    let norm = f.lp(p);
    f.scale(C64::new(1.0 / norm, 0.0))
}

/// Short-variation exponent condition `1/r < min(3/2 − 1/p, 1)`.
pub fn short_admissible(r: f64, p: f64) -> bool {
    1.0 / r < (1.5 - 1.0 / p).min(1.0)
}

/// `‖ (Σ_s ‖B_t(1_{[0,1]}, f₁, f₂)(x)‖²_{V^r_t([2^s, 2^{s+1}])})^{1/2} ‖_{L^p_x}`
/// with `samples + 1` geometric points per octave.
pub fn short_variation(
    f1: &GridSignal,
    f2: &GridSignal,
    r: f64,
    p: f64,
    octaves: &[i32],
    samples: usize,
) -> Result<f64, HarnessError> {
    let phi = Indicator { a: 0.0, b: 1.0 };
    let n = f1.len();
    let mut sq = vec![0.0f64; n];
    for &s in octaves {
        let rows: Vec<GridSignal> = (0..=samples)
            .map(|j| bilinear_average_spectral(&phi, f1, f2, 2f64.powf(s as f64 + j as f64 / samples as f64)))
            .collect::<Result<_, _>>()?;
        for (x, acc) in sq.iter_mut().enumerate() {
            let path: Vec<C64> = rows.iter().map(|g| g.samples()[x]).collect();
            *acc += variation_of(&path, r)?.value.powi(2);
        }
    }
    let h = f1.step();
    Ok((sq.iter().map(|v| v.sqrt().powf(p)).sum::<f64>() * h).powf(1.0 / p))
}

#[derive(Clone, Debug)]
pub struct ShortSummary {
    pub value: f64,
    pub refined: f64,
    pub admissible: bool,
    pub stability: f64,
}

impl ShortSummary {
    pub fn relative_change(&self) -> f64 {
        (self.refined - self.value).abs() / self.refined.abs().max(1e-300)
    }

    pub fn pass(&self) -> bool {
        self.value.is_finite() && self.relative_change() <= self.stability
    }
}

/// Band-limited `f₁` against `f₂ ≡ 1`, at the configured sampling and its double.
pub fn short_variation_experiment(cfg: &Config, seed: u64) -> Result<(Vec<Record>, ShortSummary), HarnessError> {
    const EXP: &str = "short";
    let grid = GridSpec::centered(cfg.get(EXP, "q")?, cfg.get(EXP, "n")?);
    let band: f64 = cfg.get(EXP, "band")?;
    let octaves: Vec<i32> = cfg.get_list(EXP, "octaves")?;
    let samples: usize = cfg.get(EXP, "samples")?;
    let (r, p): (f64, f64) = (cfg.get(EXP, "r")?, cfg.get(EXP, "p")?);
    let mut rng = trial_rng(seed, EXP, 0);
    let f1 = random_bandlimited(&mut rng, &grid, band, p);
    let f2 = grid.sample_fn(|_| C64::new(1.0, 0.0));
    let value = short_variation(&f1, &f2, r, p, &octaves, samples)?;
    let refined = short_variation(&f1, &f2, r, p, &octaves, 2 * samples)?;
    let s = ShortSummary { value, refined, admissible: short_admissible(r, p), stability: cfg.get(EXP, "stability")? };
    let rec = |metric: &str, v: f64, k: usize| Record::new(EXP, seed, metric, v).param("r", r).param("p", p).param("samples", k);
    let records = vec![
        rec("short_variation", value, samples),
        rec("short_variation", refined, 2 * samples),
        rec("relative_change", s.relative_change(), 2 * samples),
        rec("admissible", if s.admissible { 1.0 } else { 0.0 }, samples),
    ];
    Ok((records, s))
}

#[derive(Clone, Debug)]
pub struct GrowthSummary {
    /// `(m, max ratio over the configured trials)`.
    pub curve: Vec<(f64, f64)>,
    /// Same with twice the trials.
    pub doubled: Vec<(f64, f64)>,
    pub rate: f64,
    pub stability: f64,
    pub max_leak: f64,
    pub rate_threshold: f64,
    pub stability_threshold: f64,
}

impl GrowthSummary {
    pub fn pass(&self) -> bool {
        self.rate <= self.rate_threshold && self.stability <= self.stability_threshold && self.max_leak <= 1e-8
    }
}

/// Max-over-trials ratio `‖Σ_s B_{2^s}(ψ_s, f₁, f₂)‖_{p_out} / (‖f₁‖_{p₁}‖f₂‖_{p₂})`
/// for each `m`: a lower bound for the operator norm, not an estimate of it.
/// Inputs are band-limited trigonometric polynomials on the periodic grid, for
/// which the spectral average is exact.
pub fn shift_growth_experiment(cfg: &Config, seed: u64) -> Result<(Vec<Record>, GrowthSummary), HarnessError> {
    const EXP: &str = "growth";
    let grid = GridSpec::centered(cfg.get(EXP, "q")?, cfg.get(EXP, "n")?);
    let band: f64 = cfg.get(EXP, "band")?;
    let m_max: u32 = cfg.get(EXP, "m_max")?;
    let trials: usize = cfg.get(EXP, "trials")?;
    let (p1, p2, pout): (f64, f64, f64) = (cfg.get(EXP, "p1")?, cfg.get(EXP, "p2")?, cfg.get(EXP, "p_out")?);
    let scales: std::ops::RangeInclusive<i64> = cfg.get(EXP, "s_min")?..=cfg.get(EXP, "s_max")?;
    let base = theta_bump();
    let max_leak = theta_leak(&base);
    let mut records = Vec::new();
    let mut curve = Vec::new();
    let mut doubled = Vec::new();
    for m in 0..=m_max {
        let ratios = run_trials(2 * trials, |t| -> Result<f64, HarnessError> {
            let mut rng = trial_rng(seed, EXP, ((m as u64) << 32) | t as u64);
            let shifts = random_shifts(&mut rng, m, scales.clone());
            let f1 = random_bandlimited(&mut rng, &grid, band, p1);
            let f2 = random_bandlimited(&mut rng, &grid, band, p2);
            let mut total = grid.sample_fn(|_| C64::new(0.0, 0.0));
            for s in scales.clone() {
                let psi = base.translated(shifts.tau(s).unwrap() as f64);
                total = total.add(&bilinear_average_spectral(&psi, &f1, &f2, 2f64.powi(s as i32))?);
            }
            Ok(total.lp(pout) / (f1.lp(p1) * f2.lp(p2)))
        });
        let ratios: Vec<f64> = ratios.into_iter().collect::<Result<_, _>>()?;
        let a = ratios[..trials].iter().copied().fold(0.0, f64::max);
        let b = ratios.iter().copied().fold(0.0, f64::max);
        for (k, tr) in [(a, trials), (b, 2 * trials)] {
            records.push(Record::new(EXP, seed, "norm_lower_bound", k).param("m", m).param("trials", tr));
        }
        curve.push((m as f64, a));
        doubled.push((m as f64, b));
    }
    let rate = exponential_rate(&curve);
    let stability = curve.iter().zip(&doubled).map(|(a, b)| (b.1 - a.1).abs() / b.1).fold(0.0, f64::max);
    records.push(Record::new(EXP, seed, "fitted_rate", rate));
    records.push(Record::new(EXP, seed, "stability", stability));
    let s = GrowthSummary {
        curve,
        doubled,
        rate,
        stability,
        max_leak,
        rate_threshold: cfg.get(EXP, "rate")?,
        stability_threshold: cfg.get(EXP, "stability")?,
    };
    Ok((records, s))
}

#[derive(Clone, Debug)]
pub struct BesselSummary {
    pub curve: Vec<(f64, f64)>,
    pub rate: f64,
    pub rate_threshold: f64,
}

impl BesselSummary {
    pub fn pass(&self) -> bool {
        self.rate <= self.rate_threshold && self.curve.iter().all(|c| c.1.is_finite())
    }
}

/// Max Bessel ratio of the selected `>`/`<` collections per `m`, over random
/// families with synthetic coefficients and `λ = max size / 2`.
pub fn bessel_experiment(cfg: &Config, seed: u64) -> Result<(Vec<Record>, BesselSummary), HarnessError> {
    const EXP: &str = "bessel";
    let m_max: u32 = cfg.get(EXP, "m_max")?;
    let families: usize = cfg.get(EXP, "families")?;
    let tiles: usize = cfg.get(EXP, "tiles")?;
    let j: usize = cfg.get(EXP, "j")?;
    let nu = NuParams::new(24, -2, 0, 0).expect("valid parameters");
    let [fine, coarse] = family_scales(nu);
    let mut records = Vec::new();
    let mut curve = Vec::new();
    for m in 0..=m_max {
        let per = run_trials(families, |t| -> Result<f64, HarnessError> {
            let mut rng = trial_rng(seed, EXP, ((m as u64) << 32) | t as u64);
            let shifts = random_shifts(&mut rng, m, fine..=coarse);
            let fam = random_family(&mut rng, tiles, nu, &shifts)?;
            let cseed: u64 = rng.random();
            let mut best = 0.0f64;
            for k in 1..=3 {
                let c = |p: &TriTile| synthetic_coefficient(cseed, p, k);
                let lam = (1..=3).map(|i| size(&fam, &c, i, j, k)).collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max) / 2.0;
                let norm_sq: f64 = fam.iter().map(|p| c(p).norm_sqr()).sum();
                let sel = select_trees(&fam, &c, k, j, lam)?;
                for ip in (1..=3).filter(|&i| i != k) {
                    for coll in [&sel.greater[ip - 1], &sel.less[ip - 1]] {
                        best = best.max(bessel_ratio(coll, &c, k, lam, norm_sq)?);
                    }
                }
            }
            Ok(best)
        });
        let per: Vec<f64> = per.into_iter().collect::<Result<_, _>>()?;
        let max = per.iter().copied().fold(0.0, f64::max);
        records.push(Record::new(EXP, seed, "bessel_ratio", max).param("m", m).param("families", families));
        curve.push((m as f64, max));
    }
    let rate = exponential_rate(&curve);
    records.push(Record::new(EXP, seed, "fitted_rate", rate));
    Ok((records, BesselSummary { curve, rate, rate_threshold: cfg.get(EXP, "rate")? }))
}

/// One restricted-weak-type trial.
#[derive(Clone, Debug)]
pub struct WeakTypeTrial {
    pub m: u32,
    pub e: [f64; 3],
    pub f_measure: f64,
    pub major_measure: f64,
    pub lambda: f64,
    pub ratio: f64,
}

impl WeakTypeTrial {
    pub fn pass(&self, bound: f64) -> bool {
        self.f_measure < bound && 2.0 * self.major_measure >= self.e[2]
    }
}

fn mask_signal(grid: &GridSpec, mask: &[bool]) -> GridSignal {
    let v = mask.iter().map(|&b| C64::new(if b { 1.0 } else { 0.0 }, 0.0)).collect();
    GridSignal::new(grid.q, grid.x0, v).expect("grid length is a power of two")
}

/// `Λ(1_{E₁}, 1_{E₂}, 1_{Ẽ₃})` on the unit-scale tiles over `[−8, 8)`, and its
/// ratio to `max(1,m)⁴ (1 + |log₂|E₁||) |E₁| |E₂|^{1/2}`.
pub fn weak_type_trial(
    grid: &GridSpec,
    sets: &[Vec<bool>; 3],
    shifts: &crate::dyadic::ShiftSequence,
    scales: std::ops::RangeInclusive<i64>,
    l_cap: i64,
) -> Result<WeakTypeTrial, HarnessError> {
    let h = grid.step();
    let meas = |m: &[bool]| m.iter().filter(|&&b| b).count() as f64 * h;
    let e = [meas(&sets[0]), meas(&sets[1]), meas(&sets[2])];
    if !(e[0] <= e[1] && e[1] <= e[2]) {
        return Err(HarnessError::Invalid(format!("set measures out of order: {e:?}")));
    }
    let ratio = exceptional_ratio(grid, &sets[0], &sets[1], shifts, scales)?;
    let f = threshold_set(grid, &ratio, CALIBRATED_C0);
    let (major, major_measure) = major_subset(grid, &sets[2], &f)?;
    let nu = NuParams::new(24, -2, 0, 0).expect("valid parameters");
    let window = RInterval::new(int(-8), int(8)).expect("nonempty");
    let tiles = enumerate_family(nu, shifts, &window, 0, 0, l_cap);
    let rho = build_window()?;
    let sigs = [mask_signal(grid, &sets[0]), mask_signal(grid, &sets[1]), mask_signal(grid, &major)];
    let coefs = sigs
        .iter()
        .enumerate()
        .map(|(k, s)| TileCoefficients::from_signal(s, &rho, &tiles, k + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let lambda = crate::wavepackets::model_form(&tiles, &|p, k| coefs[k - 1].get(p));
    let m = shifts.m();
    let rhs = (m.max(1) as f64).powi(4) * (1.0 + e[0].log2().abs()) * e[0] * e[1].sqrt();
    Ok(WeakTypeTrial {
        m,
        e,
        f_measure: f.measure,
        major_measure,
        lambda,
        ratio: if e[0] > 0.0 { lambda / rhs } else { 0.0 },
    })
}

#[derive(Clone, Debug)]
pub struct WeakTypeSummary {
    pub trials: Vec<WeakTypeTrial>,
    pub bound: f64,
}

impl WeakTypeSummary {
    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| !t.pass(self.bound)).count()
    }

    pub fn max_f(&self) -> f64 {
        self.trials.iter().map(|t| t.f_measure).fold(0.0, f64::max)
    }

    pub fn min_major_fraction(&self) -> f64 {
        self.trials.iter().map(|t| t.major_measure / t.e[2]).fold(f64::INFINITY, f64::min)
    }
}

/// Random set triples with `m = trial mod (m_max + 1)` on the default grid.
pub fn restricted_weak_type_experiment(cfg: &Config, seed: u64) -> Result<(Vec<Record>, WeakTypeSummary), HarnessError> {
    const EXP: &str = "exceptional";
    let trials: usize = cfg.get(EXP, "trials")?;
    let m_max: u32 = cfg.get(EXP, "m_max")?;
    let l_cap: i64 = cfg.get(EXP, "l_cap")?;
    let grid = GridSpec::default();
    let out = run_trials(trials, |t| {
        let mut rng = trial_rng(seed, EXP, t as u64);
        let m = t as u32 % (m_max + 1);
        let sets = random_set_triple(&mut rng, &grid);
        let shifts = random_shifts(&mut rng, m, -3..=5);
        weak_type_trial(&grid, &sets, &shifts, -3..=5, l_cap)
    });
    let trials: Vec<WeakTypeTrial> = out.into_iter().collect::<Result<_, _>>()?;
    let mut records = Vec::new();
    for (t, r) in trials.iter().enumerate() {
        let rec = |metric: &str, v: f64| Record::new(EXP, seed, metric, v).param("trial", t).param("m", r.m);
        records.push(rec("F_measure", r.f_measure));
        records.push(rec("major_fraction", r.major_measure / r.e[2]));
        records.push(rec("lambda_ratio", r.ratio));
    }
    Ok((records, WeakTypeSummary { trials, bound: cfg.get(EXP, "measure_bound")? }))
}

/// `size_{i,j,k}` for `i ≠ k` recomputed without the atom sweep: for every
/// dyadic ancestor `J` of some `I_{p_j}` and every left endpoint `ξ` of some
/// `3ω_{p_i}`, the energy of the tiles below `J` whose `3ω_{p_i}` holds `ξ`,
/// divided by `|J|`.
pub fn tree_size_direct(tiles: &[TriTile], e: &[f64], i: usize, j: usize) -> f64 {
    use std::collections::HashMap;
    let ds: Vec<Dyadic> = tiles.iter().map(|p| dyadic_time(p, j)).collect();
    let three = int(3);
    let w: Vec<(Rational, Rational)> = tiles
        .iter()
        .map(|p| {
            let d = p.freq(i).dilate(&three);
            (d.left().clone(), d.right().clone())
        })
        .collect();
    // climb until every tile on each side of 0 shares one ancestor
    let top = |neg: bool| -> Option<i64> {
        let side: Vec<&Dyadic> = ds.iter().filter(|d| (d.n < 0) == neg).collect();
        let mut s = side.iter().map(|d| d.s).max()?;
        let anc = |d: &Dyadic, s: i64| d.n.div_euclid(1i64 << (s - d.s));
        while side.iter().any(|d| anc(d, s) != anc(side[0], s)) {
            s += 1;
        }
        Some(s)
    };
    let tops = [top(true), top(false)];
    let mut members: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (t, d) in ds.iter().enumerate() {
        let limit = tops[usize::from(d.n >= 0)].unwrap();
        let (mut s, mut n) = (d.s, d.n);
        while s <= limit {
            members.entry((s, n)).or_default().push(t);
            s += 1;
            n = n.div_euclid(2);
        }
    }
    let mut best = 0.0f64;
    for ((s, _), set) in &members {
        for &a in set {
            let xi = &w[a].0;
            let sum: f64 = set.iter().filter(|&&b| &w[b].0 <= xi && xi < &w[b].1).map(|&b| e[b]).sum();
            best = best.max(sum / 2f64.powi(*s as i32));
        }
    }
    best.sqrt()
}

#[derive(Clone, Debug, Default)]
pub struct TreeReport {
    pub families: usize,
    pub max_tiles: usize,
    pub trees: usize,
    pub residual_violations: usize,
    pub disjoint_violations: usize,
    pub conservation_violations: usize,
    /// Largest recomputed residual size over `λ`.
    pub max_residual_ratio: f64,
}

impl TreeReport {
    pub fn pass(&self) -> bool {
        self.residual_violations == 0 && self.disjoint_violations == 0 && self.conservation_violations == 0
    }
}

/// Tree selection on random families: residual sizes recomputed by
/// [`tree_size_direct`], `>`/`<` collections strongly disjoint, and the tiles
/// of trees plus residual partitioning the family so that `Λ` is unchanged.
pub fn tree_algorithm_check(families: usize, max_tiles: usize, m_max: u32, j: usize, seed: u64) -> Result<TreeReport, HarnessError> {
    let nu = NuParams::new(24, -2, 0, 0).expect("valid parameters");
    let [fine, coarse] = family_scales(nu);
    let per = run_trials(families, |t| -> Result<TreeReport, HarnessError> {
        let mut rng = trial_rng(seed, "trees", t as u64);
        let m = t as u32 % (m_max + 1);
        let k = t % 3 + 1;
        let shifts = random_shifts(&mut rng, m, fine..=coarse);
        let draw = rng.random_range(max_tiles / 4..=max_tiles);
        let fam = random_family(&mut rng, draw, nu, &shifts)?;
        let cseed: u64 = rng.random();
        let c = |p: &TriTile| synthetic_coefficient(cseed, p, k);
        let lam = (1..=3).map(|i| size(&fam, &c, i, j, k)).collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max) / 2.0;
        let sel = select_trees(&fam, &c, k, j, lam)?;
        let mut rep = TreeReport { families: 1, max_tiles: fam.len(), trees: sel.all_trees().filter(|tr| !tr.tiles.is_empty()).count(), ..Default::default() };
        let re: Vec<f64> = sel.residual.iter().map(|p| c(p).norm_sqr()).collect();
        for i in 1..=3 {
            let v = if i == k {
                sel.residual.iter().zip(&re).map(|(p, x)| x / 2f64.powi(p.s as i32)).fold(0.0, f64::max).sqrt()
            } else {
                tree_size_direct(&sel.residual, &re, i, j)
            };
            rep.max_residual_ratio = rep.max_residual_ratio.max(v / lam);
            if v > lam * (1.0 + 1e-12) {
                rep.residual_violations += 1;
            }
        }
        for ip in (1..=3).filter(|&i| i != k) {
            for coll in [&sel.greater[ip - 1], &sel.less[ip - 1]] {
                if !crate::dyadic::strongly_disjoint(coll, k).map_err(ForestError::from)? {
                    rep.disjoint_violations += 1;
                }
            }
        }
        let coef = |p: &TriTile, kk: usize| synthetic_coefficient(cseed, p, kk);
        let mut pieces: Vec<TriTile> = sel.selected_tiles();
        pieces.extend(sel.residual.iter().cloned());
        let mut sorted = pieces.clone();
        sorted.sort();
        let whole = crate::wavepackets::model_form(&fam, &coef);
        let parts: f64 = sel.all_trees().map(|tr| crate::wavepackets::model_form(&tr.tiles, &coef)).sum::<f64>()
            + crate::wavepackets::model_form(&sel.residual, &coef);
        if sorted != fam || crate::wavepackets::model_form(&pieces, &coef) != whole || (parts - whole).abs() > 1e-12 * whole {
            rep.conservation_violations += 1;
        }
        Ok(rep)
    });
    let mut out = TreeReport::default();
    for r in per {
        let r = r?;
        out.families += 1;
        out.max_tiles = out.max_tiles.max(r.max_tiles);
        out.trees += r.trees;
        out.residual_violations += r.residual_violations;
        out.disjoint_violations += r.disjoint_violations;
        out.conservation_violations += r.conservation_violations;
        out.max_residual_ratio = out.max_residual_ratio.max(r.max_residual_ratio);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exact checks

/// Prep-interval predicate against its closed form at every `c ∈ ¼ℤ ∩ [−30, 30]`,
/// which includes all endpoints and midpoints of the predicted intervals.
/// Returns `(checks, mismatches)`.
pub fn prep_check() -> (usize, usize) {
    use crate::dyadic::{prep_holds, prep_interval, prep_predicted};
    let mut checks = 0;
    let mut bad = 0;
    for which in [1u8, 2] {
        let j = prep_interval(which);
        for k in -120i64..=120 {
            let c = Rational::new(k.into(), 4.into());
            checks += 1;
            if prep_holds(&j, &c) != prep_predicted(which, &c) {
                bad += 1;
            }
        }
    }
    (checks, bad)
}

#[derive(Clone, Debug)]
pub struct FrameReport {
    pub partition_residual: f64,
    pub max_resynthesis_error: f64,
    pub functions: usize,
}

impl FrameReport {
    pub fn pass(&self) -> bool {
        self.partition_residual <= 1e-10 && self.max_resynthesis_error <= 1e-6
    }
}

/// Partition of unity of the window and packet resynthesis at scales −1, 0, 1
/// on band-limited functions (`|ξ| ≤ 8`) on the default grid.
pub fn frame_check(functions: usize, seed: u64) -> Result<FrameReport, HarnessError> {
    let w = build_window()?;
    let grid = GridSpec::default();
    let errs = run_trials(functions, |t| -> Result<f64, HarnessError> {
        let mut rng = trial_rng(seed, "frames", t as u64);
        let f = random_bandlimited(&mut rng, &grid, 8.0, 2.0);
        let mut worst = 0.0f64;
        for s in -1..=1 {
            let c = crate::wavepackets::wave_packet_expand(&f, &w, s)?;
            let back = crate::wavepackets::synthesize(&c, &w);
            worst = worst.max(back.sub(&f).l2() / f.l2());
        }
        Ok(worst)
    });
    let mut max = 0.0f64;
    for e in errs {
        max = max.max(e?);
    }
    Ok(FrameReport { partition_residual: w.partition_residual(100_003), max_resynthesis_error: max, functions })
}

#[derive(Clone, Debug, Default)]
pub struct RefinedReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `lhs / (λ²|K|)`.
    pub max_ratio: f64,
}

/// Random `f` (signed blocks on `[−8, 8)`), random `λ`, a random dyadic `K`
/// and Haar packets with random amplitudes in `[−1, 1]` on every dyadic
/// `I ⊂ K` of at least two grid cells.
pub fn refined_trials(trials: usize, seed: u64) -> Result<RefinedReport, HarnessError> {
    use crate::forest::{haar_packet, refined_check, refined_square_set};
    let grid = GridSpec::default();
    let per = run_trials(trials, |t| -> Result<f64, HarnessError> {
        let mut rng = trial_rng(seed, "refined", t as u64);
        let mut vals = vec![C64::new(0.0, 0.0); grid.n];
        for _ in 0..rng.random_range(1..=6) {
            let len = rng.random_range(1..=256usize);
            let start = rng.random_range(1536..2560 - len);
            let hgt = rng.random_range(-2.0..2.0);
            for v in &mut vals[start..start + len] {
                *v += hgt;
            }
        }
        let f = GridSignal::new(grid.q, grid.x0, vals)?;
        let lambda = rng.random_range(0.05..2.0);
        let set = refined_square_set(&f, lambda)?;
        let ks = rng.random_range(-2i64..=3);
        let k = Dyadic { s: ks, n: rng.random_range(-(8 >> ks.max(0))..(8 >> ks.max(0)).max(1)) * (1 << (-ks).max(0)) };
        let mut packets = Vec::new();
        for s in -(grid.q as i64) + 1..=k.s {
            let per_level = 1i64 << (k.s - s);
            for j in 0..per_level {
                let d = Dyadic { s, n: k.n * per_level + j };
                packets.push((d, haar_packet(&f, &d, rng.random_range(-1.0..1.0))));
            }
        }
        let (lhs, rhs) = refined_check(&f, &set, &k, &packets);
        Ok(lhs / rhs)
    });
    let mut rep = RefinedReport::default();
    for r in per {
        let r = r?;
        rep.trials += 1;
        rep.max_ratio = rep.max_ratio.max(r);
        if r > 1.0 {
            rep.violations += 1;
        }
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// Variation oracle

/// `V^r` by enumerating every increasing index subsequence.
pub fn brute_force_variation(a: &[C64], r: f64) -> f64 {
    let n = a.len();
    assert!(n <= 20, "exhaustive search is exponential");
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        let mut prev: Option<usize> = None;
        let mut s = 0.0;
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            if let Some(j) = prev {
                s += (a[i] - a[j]).norm().powf(r);
            }
            prev = Some(i);
        }
        best = best.max(s);
    }
    best.powf(1.0 / r)
}

#[derive(Clone, Debug, Default)]
pub struct OracleReport {
    pub cases: usize,
    pub max_error: f64,
    pub jump_checks: usize,
    pub jump_violations: usize,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.max_error <= 1e-12 && self.jump_violations == 0
    }
}

/// DP against brute force on every sequence over `{0,1,2}` of length at most
/// `max_len`, then `λ^r N_λ ≤ (V^r)^r` on random Gaussian-walk paths.
pub fn variation_oracle(max_len: usize, rs: &[f64], paths: usize, path_len: usize, seed: u64) -> Result<OracleReport, HarnessError> {
    let mut rep = OracleReport::default();
    for len in 0..=max_len {
        let per = run_trials(3usize.pow(len as u32), |code| -> Result<f64, HarnessError> {
            let mut c = code;
            let a: Vec<C64> = (0..len)
                .map(|_| {
                    let d = c % 3;
                    c /= 3;
                    C64::new(d as f64, 0.0)
                })
                .collect();
            let mut err = 0.0f64;
            for &r in rs {
                err = err.max((variation_of(&a, r)?.value - brute_force_variation(&a, r)).abs());
            }
            Ok(err)
        });
        for e in per {
            rep.max_error = rep.max_error.max(e?);
            rep.cases += rs.len();
        }
    }
    let per = run_trials(paths, |t| -> Result<(usize, usize), HarnessError> {
        let mut rng = trial_rng(seed, "variation-oracle", t as u64);
        let mut x = C64::new(0.0, 0.0);
        let a: Vec<C64> = (0..path_len)
            .map(|_| {
                x += C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                x
            })
            .collect();
        let (mut checks, mut bad) = (0, 0);
        for &r in rs {
            let vr = variation_of(&a, r)?.value.powf(r);
            for i in 1..=20 {
                let lam = 0.25 * i as f64;
                checks += 1;
                if lam.powf(r) * jumps_of(&a, lam) as f64 > vr * (1.0 + 1e-12) {
                    bad += 1;
                }
            }
        }
        Ok((checks, bad))
    });
    for res in per {
        let (c, b) = res?;
        rep.jump_checks += c;
        rep.jump_violations += b;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_overlay() {
        let mut c = Config::defaults();
        assert_eq!(c.get::<usize>("ergodic", "n").unwrap(), 4096);
        assert_eq!(c.get_list::<i32>("short", "octaves").unwrap(), vec![-1, 0, 1]);
        c.overlay("[ergodic]\nn = 64 # smaller\n").unwrap();
        assert_eq!(c.get::<usize>("ergodic", "n").unwrap(), 64);
        assert!(matches!(Config::parse("[x\n"), Err(HarnessError::Config { line: 1, .. })));
        assert!(matches!(Config::parse("[x]\njunk\n"), Err(HarnessError::Config { line: 2, .. })));
        assert!(matches!(c.get::<f64>("ergodic", "nope"), Err(HarnessError::MissingKey(..))));
    }

    #[test]
    fn csv_layout() {
        let recs = vec![
            Record::new("e", 1, "a", 0.5).param("z", 1).param("b", "x"),
            Record::new("e", 1, "c", 0.1),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &Meta { grid: "g".into(), seed: 1 }, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "experiment,metric,seed,b,z,value");
        assert!(lines[1].starts_with("meta,version="));
        assert!(lines[1].contains("c0=12"));
        assert_eq!(lines[2], "e,a,1,x,1,0.5");
        assert_eq!(lines[3], "e,c,1,,,0.1");
    }

    #[test]
    fn trial_streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|t| trial_rng(7, "x", t).random()).collect();
        let b: Vec<u64> = run_trials(4, |t| trial_rng(7, "x", t as u64).random());
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_ne!(trial_rng(7, "x", 0).random::<u64>(), trial_rng(7, "y", 0).random::<u64>());
    }

    #[test]
    fn rotation_closed_forms() {
        let n = 64;
        let theta = 0.3141;
        let sys = DynSystem::CircleRotation { theta, n };
        let e = |s: f64| -> Vec<C64> { (0..n).map(|j| cis(s * j as f64 / n as f64)).collect() };
        let conj = double_recurrence(&sys, &e(1.0), &e(-1.0), 40).unwrap();
        for (i, row) in conj.iter().enumerate() {
            // independent: direct sum of e^{4πiθk}
            let want: C64 = (0..=i).map(|k| cis(2.0 * theta * k as f64)).sum::<C64>() / (i + 1) as f64;
            for z in row {
                assert!((z - want).norm() < 1e-10);
            }
        }
        let same = double_recurrence(&sys, &e(1.0), &e(1.0), 40).unwrap();
        for row in &same {
            assert_eq!(row, &same[0]);
        }
        for (j, z) in same[0].iter().enumerate() {
            assert!((z - cis(2.0 * j as f64 / n as f64)).norm() < 1e-12);
        }
    }

    #[test]
    fn exponential_pair_has_zero_variation() {
        let n = 32;
        let sys = DynSystem::CircleRotation { theta: 0.17, n };
        let e: Vec<C64> = (0..n).map(|j| cis(j as f64 / n as f64)).collect();
        let ns: Vec<usize> = (0..10).map(|k| 1 << k).collect();
        let avgs = averages_at(&sys, &e, &e, &ns).unwrap();
        assert_eq!(lacunary_variation(&avgs, 10, 2.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn first_average_is_the_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f1 = random_signs(&mut rng, 16);
        let f2: Vec<C64> = (0..16).map(|_| C64::new(rng.random(), rng.random())).collect();
        let m = double_recurrence(&DynSystem::CyclicShift { n: 16 }, &f1, &f2, 3).unwrap();
        for x in 0..16 {
            assert_eq!(m[0][x], f1[x] * f2[x]);
        }
        // M_3 by hand
        let x = 5;
        let want = (f1[5] * f2[5] + f1[6] * f2[4] + f1[7] * f2[3]) / 3.0;
        assert!((m[2][x] - want).norm() < 1e-15);
        assert!(double_recurrence(&DynSystem::CyclicShift { n: 16 }, &f1, &f2, 0).is_err());
    }

    #[test]
    fn means_are_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f1: Vec<C64> = (0..64).map(|_| C64::new(rng.random(), rng.random())).collect();
        let f2 = random_signs(&mut rng, 64);
        for n in [1, 7, 40, 100] {
            assert!(mean_conservation_defect(&f1, &f2, n).unwrap() < 1e-13);
        }
    }

    #[test]
    fn admissibility_flag() {
        assert!(!short_admissible(1.0, 2.0));
        assert!(short_admissible(1.5, 2.0));
        assert!(!short_admissible(1.0, 1.0));
        // 3/2 − 1/p = 1/2 at p = 1, so r must exceed 2
        assert!(!short_admissible(2.0, 1.0));
        assert!(short_admissible(2.5, 1.0));
    }

    #[test]
    fn short_variation_refines_and_vanishes_on_zero() {
        let cfg = Config::defaults();
        let (_, s) = short_variation_experiment(&cfg, 3).unwrap();
        assert!(s.admissible);
        assert!(s.value > 0.0 && s.pass(), "{s:?}");
        let grid = GridSpec::centered(4, 512);
        let z = grid.sample_fn(|_| C64::new(0.0, 0.0));
        let one = grid.sample_fn(|_| C64::new(1.0, 0.0));
        assert_eq!(short_variation(&z, &one, 2.0, 2.0, &[0], 8).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_agrees_with_dp_on_small_cases() {
        let rep = variation_oracle(5, &[1.0, 2.0], 10, 12, 0).unwrap();
        assert!(rep.pass(), "{rep:?}");
        assert_eq!(rep.cases, 2 * (1 + 3 + 9 + 27 + 81 + 243));
    }

    #[test]
    fn exponential_rate_of_known_curves() {
        let pts: Vec<(f64, f64)> = (0..5).map(|m| (m as f64, 3.0 * (0.5 * m as f64).exp())).collect();
        assert!((exponential_rate(&pts) - 0.5).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn empty_first_set_gives_zero_form() {
        let grid = GridSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let [_, e2, e3] = random_set_triple(&mut rng, &grid);
        let e1 = vec![false; grid.n];
        let shifts = random_shifts(&mut rng, 2, -3..=5);
        let t = weak_type_trial(&grid, &[e1, e2, e3], &shifts, -3..=5, 12).unwrap();
        assert_eq!(t.lambda, 0.0);
        assert_eq!(t.f_measure.min(0.0), 0.0);
    }

    #[test]
    fn direct_size_matches_brute_force() {
        let nu = NuParams::new(24, -2, 0, 0).unwrap();
        let [fine, coarse] = family_scales(nu);
        for t in 0..20u64 {
            let mut rng = trial_rng(1, "size", t);
            let shifts = random_shifts(&mut rng, (t % 3) as u32, fine..=coarse);
            let fam = random_family(&mut rng, 10, nu, &shifts).unwrap();
            let c = |p: &TriTile| synthetic_coefficient(t, p, 1);
            let e: Vec<f64> = fam.iter().map(|p| c(p).norm_sqr()).collect();
            for i in 2..=3 {
                let want = crate::forest::size_brute_force(&fam, &c, i, 3, 1).unwrap();
                let got = tree_size_direct(&fam, &e, i, 3);
                assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn tree_check_on_small_run() {
        let rep = tree_algorithm_check(6, 120, 2, 3, 5).unwrap();
        assert!(rep.pass(), "{rep:?}");
        assert!(rep.trees > 0);
    }

    #[test]
    fn prep_and_frames() {
        assert_eq!(prep_check(), (482, 0));
        let rep = frame_check(3, 1).unwrap();
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn refined_inequality_on_random_trials() {
        let rep = refined_trials(100, 0).unwrap();
        println!("{rep:?}");
        assert_eq!(rep.violations, 0, "{rep:?}");
        assert!(rep.max_ratio > 0.0);
    }

    #[test]
    fn experiments_are_deterministic() {
        let mut cfg = Config::defaults();
        cfg.overlay("[ergodic]\nn = 256\ntrials = 4\nscales_long = 8\nscales_short = 4\n").unwrap();
        let (a, _) = ergodic_experiment(&cfg, 9).unwrap();
        let (b, _) = ergodic_experiment(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let (c, _) = ergodic_experiment(&cfg, 10).unwrap();
        assert_ne!(a, c);
    }
}
