//! Constructive decompositions: the indicator of `[0, 1]` into shifted bumps,
//! Dini kernels into slabs of localized pieces, and Hörmander-type
//! multipliers into Fourier series, with the norms that gate them.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::signal::{
    class_check, eta_kernel_check, plateau, smooth_step, BumpClass, BumpClassSpec, EtaReport, Func, GridSignal,
    GridSpec, ModulusOfContinuity, SignalError, Zeta, C64, TWO_PI,
};

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("{what}: residual {value:e} above tolerance {tol:e}")]
    Residual { what: String, value: f64, tol: f64 },
    #[error("class check failed for {0}")]
    ClassCheck(String),
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("kernel fails the Dini kernel bounds: {0:?}")]
    Kernel(Box<EtaReport>),
    #[error("cardinality bound violated: |L({a}, {j})| = {count} > {bound}")]
    Cardinality { a: i64, j: i64, count: usize, bound: usize },
    #[error("malformed certificate: {0}")]
    Malformed(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DecompError>;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn pow2(e: i64) -> f64 {
    2f64.powi(e as i32)
}

/// `θ = 1` on `[−1/2, 1/2]`, supported in `[−1, 1]`.
pub fn theta(xi: f64) -> f64 {
    plateau(xi, -0.5, 0.5, 0.5)
}

/// `χ̂(ξ) = θ(ξ/2)`, so that `χ̂ + Σ_{j=1}^J ρ̂(2^{−j}ξ) = θ(2^{−J−1}ξ)`.
pub fn chi_hat(xi: f64) -> f64 {
    theta(xi / 2.0)
}

/// `ρ̂(ξ) = θ(ξ/2) − θ(ξ)`, supported in `1/2 ≤ |ξ| ≤ 2`.
pub fn rho_hat(xi: f64) -> f64 {
    theta(xi / 2.0) - theta(xi)
}

/// `ρ_k(ξ) = ρ̂(2^{−k}ξ)`
pub fn rho_k(k: i64, xi: f64) -> f64 {
    rho_hat(xi * pow2(-k))
}

#[derive(Clone, Debug)]
pub struct LPPartition {
    pub chi_hat: GridSignal,
    pub rho_hat: GridSignal,
    pub j_max: u32,
}

impl LPPartition {
    /// `χ̂(ξ) + Σ_{j=1}^J ρ̂(2^{−j}ξ)`, summed term by term.
    pub fn partial_sum(&self, xi: f64, j: u32) -> f64 {
        let mut acc = chi_hat(xi);
        for k in 1..=j {
            acc += rho_hat(xi * pow2(-(k as i64)));
        }
        acc
    }

    /// Frequencies where the partial sum at `j_max` must equal 1.
    pub fn resolved_band(&self) -> f64 {
        pow2(self.j_max as i64)
    }

    pub fn residual(&self, xis: &[f64]) -> f64 {
        xis.iter()
            .map(|&x| (self.partial_sum(x, self.j_max) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub fn build_lp_partition(j_max: u32) -> Result<LPPartition> {
    if j_max < 1 {
        return Err(DecompError::BadParam("j_max must be at least 1".into()));
    }
    let spec = GridSpec { q: 8, n: 1 << 11, x0: -4.0 };
    let chi = spec.sample_fn(|x| c(chi_hat(x)));
    let rho = spec.sample_fn(|x| c(rho_hat(x)));
    for k in 0..rho.len() {
        let a = rho.x(k).abs();
        if rho.samples()[k].norm() != 0.0 && !(0.5..=2.0).contains(&a) {
            return Err(DecompError::Residual { what: format!("rho support at {}", rho.x(k)), value: rho.samples()[k].norm(), tol: 0.0 });
        }
    }
    let p = LPPartition { chi_hat: chi, rho_hat: rho, j_max };
    let band = p.resolved_band();
    let mut xis: Vec<f64> = (0..=2048).map(|k| -band + 2.0 * band * k as f64 / 2048.0).collect();
    // log-spaced points resolve the small scales
    for k in 0..=64 * (j_max as i64 + 8) {
        let x = band * 2f64.powf(-(k as f64) / 64.0);
        xis.push(x);
        xis.push(-x);
    }
    let r = p.residual(&xis);
    if r > 1e-10 {
        return Err(DecompError::Residual { what: "partition of unity".into(), value: r, tol: 1e-10 });
    }
    Ok(p)
}

/// Four-point Lagrange interpolation of grid samples, exact at grid points and
/// zero outside the grid.
pub fn interpolate(f: &GridSignal, x: f64) -> C64 {
    let h = f.step();
    let r = (x - f.origin()) / h;
    let n = f.len() as i64;
    let k = r.floor();
    let t = r - k;
    let k = k as i64;
    if r < 0.0 || r > (n - 1) as f64 {
        return C64::new(0.0, 0.0);
    }
    if t.abs() < 1e-12 {
        return f.samples()[k as usize];
    }
    let at = |i: i64| if (0..n).contains(&i) { f.samples()[i as usize] } else { C64::new(0.0, 0.0) };
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    at(k - 1) * w[0] + at(k) * w[1] + at(k + 1) * w[2] + at(k + 2) * w[3]
}

/// `G(y) = ∫_{−∞}^y χ_θ` with `χ̂_θ = θ`, tabulated with its derivative and
/// evaluated by cubic Hermite interpolation. Off the table `G` is replaced by
/// the Heaviside function.
#[derive(Clone, Debug)]
pub struct SmoothHeaviside {
    y0: f64,
    h: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
    /// `|G − H|` at the ends of the table.
    pub tail: f64,
}

impl SmoothHeaviside {
    pub fn new() -> Self {
        let n = 1usize << 16;
        let dxi = 2f64.powi(-8);
        let spec_grid = GridSpec { q: 8, n, x0: -(n as f64) * dxi / 2.0 };
        let spec = spec_grid.sample_fn(|xi| c(theta(xi)));
        let dspec = spec_grid.sample_fn(|xi| C64::new(0.0, TWO_PI * xi) * theta(xi));
        let x0 = -128.0;
        let chi = GridSignal::inverse_fourier(&spec, x0);
        let dchi = GridSignal::inverse_fourier(&dspec, x0);
        let h = chi.step();
        let f: Vec<f64> = chi.samples().iter().map(|z| z.re).collect();
        let df: Vec<f64> = dchi.samples().iter().map(|z| z.re).collect();
        let mut g = vec![0.0; n];
        for k in 1..n {
            // trapezoid with endpoint-derivative correction
            g[k] = g[k - 1] + h * (f[k - 1] + f[k]) / 2.0 + h * h * (df[k - 1] - df[k]) / 12.0;
        }
        let tail = g[0].abs().max((1.0 - g[n - 1]).abs()).max(f[0].abs() * 256.0);
        SmoothHeaviside { y0: x0, h, g, dg: f, tail }
    }

    /// Derivative `χ_θ(y)`.
    pub fn density(&self, y: f64) -> f64 {
        self.hermite(y).map_or(0.0, |v| v.1)
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self.hermite(y) {
            Some(v) => v.0,
            None => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn hermite(&self, y: f64) -> Option<(f64, f64)> {
        let r = (y - self.y0) / self.h;
        let n = self.g.len();
        if r < 0.0 || r >= (n - 1) as f64 {
            return None;
        }
        let k = r.floor() as usize;
        let t = r - k as f64;
        let (p0, p1) = (self.g[k], self.g[k + 1]);
        let (m0, m1) = (self.dg[k] * self.h, self.dg[k + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1;
        let d = ((6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1 + (3.0 * t2 - 2.0 * t) * m1)
            / self.h;
        Some((v, d))
    }
}

impl Default for SmoothHeaviside {
    fn default() -> Self {
        Self::new()
    }
}

/// Certificate kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CertKind {
    Indicator,
    Dini,
    Hormander,
}

impl CertKind {
    pub fn name(self) -> &'static str {
        match self {
            CertKind::Indicator => "indicator",
            CertKind::Dini => "dini",
            CertKind::Hormander => "hormander",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "indicator" => Some(CertKind::Indicator),
            "dini" => Some(CertKind::Dini),
            "hormander" => Some(CertKind::Hormander),
            _ => None,
        }
    }
}

/// One term `coefficient · D_{2^{scale_exp}} bump`, where
/// `D_λ f(x) = λ^{−1} f(x/λ)`. Hörmander terms live on the frequency side and
/// are added without dilation.
#[derive(Clone, Debug)]
pub struct Term {
    pub coefficient: C64,
    pub scale_exp: i64,
    pub shift: i64,
    /// Slab or scale index the term belongs to.
    pub group: i64,
    pub bump: GridSignal,
    pub class: Option<BumpClassSpec>,
}

impl Term {
    pub fn eval(&self, x: f64, kind: CertKind) -> C64 {
        if kind == CertKind::Hormander {
            return self.coefficient * interpolate(&self.bump, x);
        }
        let lam = pow2(self.scale_exp);
        self.coefficient * interpolate(&self.bump, x / lam) / lam
    }

    /// Interval outside which the term vanishes.
    pub fn support(&self, kind: CertKind) -> (f64, f64) {
        let (a, b) = self.bump.domain();
        if kind == CertKind::Hormander {
            return (a, b);
        }
        let lam = pow2(self.scale_exp);
        (a * lam, b * lam)
    }
}

#[derive(Clone, Debug)]
pub struct DecompositionCertificate {
    pub kind: CertKind,
    pub terms: Vec<Term>,
    /// Named reference functions that the residuals are measured against.
    pub targets: Vec<(String, GridSignal)>,
    pub residual_l1: f64,
    pub residual_l2: f64,
    /// Grid metadata and auxiliary measurements.
    pub meta: BTreeMap<String, String>,
}

fn class_name(c: Option<BumpClass>) -> &'static str {
    match c {
        None => "none",
        Some(BumpClass::S0) => "S0",
        Some(BumpClass::S0Tau) => "S0tau",
        Some(BumpClass::S0Plus) => "S0plus",
        Some(BumpClass::Theta0) => "Theta0",
        Some(BumpClass::Theta0Tau) => "Theta0tau",
    }
}

fn parse_class(s: &str) -> Option<Option<BumpClass>> {
    Some(match s {
        "none" => None,
        "S0" => Some(BumpClass::S0),
        "S0tau" => Some(BumpClass::S0Tau),
        "S0plus" => Some(BumpClass::S0Plus),
        "Theta0" => Some(BumpClass::Theta0),
        "Theta0tau" => Some(BumpClass::Theta0Tau),
        _ => return None,
    })
}

impl DecompositionCertificate {
    pub fn target(&self, name: &str) -> Option<&GridSignal> {
        self.targets.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Sum of the terms (optionally restricted to one group) on the grid of `like`.
    pub fn synthesize(&self, like: &GridSignal, group: Option<i64>) -> GridSignal {
        let mut out = vec![C64::new(0.0, 0.0); like.len()];
        let h = like.step();
        for t in self.terms.iter().filter(|t| group.map_or(true, |g| t.group == g)) {
            let (a, b) = t.support(self.kind);
            let k0 = (((a - like.origin()) / h).floor().max(0.0)) as usize;
            let k1 = ((((b - like.origin()) / h).ceil() + 1.0).max(0.0) as usize).min(like.len());
            for (k, o) in out.iter_mut().enumerate().take(k1).skip(k0) {
                *o += t.eval(like.x(k), self.kind);
            }
        }
        like.with_samples(out)
    }

    /// Every bump with a declared class passes [`class_check`].
    pub fn check_classes(&self) -> Result<()> {
        for (i, t) in self.terms.iter().enumerate() {
            if let Some(spec) = &t.class {
                let r = class_check(&t.bump, spec);
                if !r.pass {
                    return Err(DecompError::ClassCheck(format!("term {i}: {r:?}")));
                }
            }
        }
        Ok(())
    }

    /// Recomputes `(residual_l1, residual_l2)` from the payload alone.
    pub fn recompute_residuals(&self) -> Result<(f64, f64)> {
        match self.kind {
            CertKind::Indicator => {
                let j = self.terms.iter().map(|t| t.group).max().unwrap_or(0);
                Ok(indicator_residual(&self.terms, j))
            }
            CertKind::Dini => {
                let (mut l1, mut l2) = (0.0f64, 0.0f64);
                for (name, target) in &self.targets {
                    let Some(m) = name.strip_prefix("slab ").and_then(|m| m.parse::<i64>().ok()) else {
                        continue;
                    };
                    let rec = self.synthesize(target, Some(m));
                    let d = rec.sub(target);
                    l1 = l1.max(d.l1() / target.l1().max(1e-300));
                    l2 = l2.max(d.l2() / target.l2().max(1e-300));
                }
                Ok((l1, l2))
            }
            CertKind::Hormander => {
                let target = self.target("m_s").ok_or_else(|| DecompError::Malformed("missing m_s target".into()))?;
                let rec = self.synthesize(target, None);
                let d = rec.sub(target);
                Ok((d.l1(), d.l2()))
            }
        }
    }

    /// Class checks plus agreement of the stored residuals with recomputed ones.
    pub fn verify(&self) -> Result<(f64, f64)> {
        self.check_classes()?;
        let (l1, l2) = self.recompute_residuals()?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300);
        if !close(l1, self.residual_l1) || !close(l2, self.residual_l2) {
            return Err(DecompError::Residual {
                what: format!("stored residuals ({:e}, {:e}) vs recomputed", self.residual_l1, self.residual_l2),
                value: (l1 - self.residual_l1).abs().max((l2 - self.residual_l2).abs()),
                tol: 0.0,
            });
        }
        Ok((l1, l2))
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "kind = {}", self.kind.name())?;
        writeln!(w, "residual_l1 = {:e}", self.residual_l1)?;
        writeln!(w, "residual_l2 = {:e}", self.residual_l2)?;
        for (k, v) in &self.meta {
            writeln!(w, "meta.{k} = {v}")?;
        }
        for t in &self.terms {
            let (cls, sh, d, m, cst) = match &t.class {
                Some(s) => (class_name(Some(s.class)), s.shift, s.max_deriv, s.max_decay, s.constant),
                None => ("none", 0.0, 0, 0, 0.0),
            };
            writeln!(
                w,
                "term = {:e} {:e} {} {} {} {} {:e} {} {} {:e}",
                t.coefficient.re, t.coefficient.im, t.scale_exp, t.shift, t.group, cls, sh, d, m, cst
            )?;
        }
        for (name, _) in &self.targets {
            writeln!(w, "target = {name}")?;
        }
        writeln!(w, "---")?;
        for t in &self.terms {
            t.bump.write_binary(w)?;
        }
        for (_, s) in &self.targets {
            s.write_binary(w)?;
        }
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut kind = None;
        let (mut l1, mut l2) = (None, None);
        let mut meta = BTreeMap::new();
        let mut heads = Vec::new();
        let mut names = Vec::new();
        loop {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(DecompError::Malformed("missing payload separator".into()));
            }
            let line = line.trim_end();
            if line == "---" {
                break;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| DecompError::Malformed(format!("header line {line:?}")))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| DecompError::Malformed(format!("number {s:?}")));
            match k {
                "kind" => kind = Some(CertKind::parse(v).ok_or_else(|| DecompError::Malformed(format!("kind {v}")))?),
                "residual_l1" => l1 = Some(num(v)?),
                "residual_l2" => l2 = Some(num(v)?),
                "term" => {
                    let f: Vec<&str> = v.split_whitespace().collect();
                    if f.len() != 10 {
                        return Err(DecompError::Malformed(format!("term {v:?}")));
                    }
                    let int = |s: &str| s.parse::<i64>().map_err(|_| DecompError::Malformed(format!("integer {s:?}")));
                    let class = parse_class(f[5]).ok_or_else(|| DecompError::Malformed(format!("class {}", f[5])))?;
                    let spec = class.map(|cl| {
                        BumpClassSpec::new(cl, f[6].parse().unwrap_or(0.0), f[7].parse().unwrap_or(0), f[8].parse().unwrap_or(0))
                            .with_constant(f[9].parse().unwrap_or(1.0))
                    });
                    heads.push((C64::new(num(f[0])?, num(f[1])?), int(f[2])?, int(f[3])?, int(f[4])?, spec));
                }
                "target" => names.push(v.to_string()),
                _ => match k.strip_prefix("meta.") {
                    Some(key) => {
                        meta.insert(key.to_string(), v.to_string());
                    }
                    None => return Err(DecompError::Malformed(format!("unknown key {k}"))),
                },
            }
        }
        let kind = kind.ok_or_else(|| DecompError::Malformed("missing kind".into()))?;
        let mut terms = Vec::with_capacity(heads.len());
        for (coefficient, scale_exp, shift, group, class) in heads {
            let bump = GridSignal::read_binary(&mut r)?;
            terms.push(Term { coefficient, scale_exp, shift, group, bump, class });
        }
        let mut targets = Vec::new();
        for n in names {
            targets.push((n, GridSignal::read_binary(&mut r)?));
        }
        Ok(DecompositionCertificate {
            kind,
            terms,
            targets,
            residual_l1: l1.ok_or_else(|| DecompError::Malformed("missing residual_l1".into()))?,
            residual_l2: l2.ok_or_else(|| DecompError::Malformed("missing residual_l2".into()))?,
            meta,
        })
    }
}

/// Bump grid for the indicator decomposition: `Δ = 2^{−8}` on `[−32, 32)`.
const IND_Q: i32 = 8;
const IND_N: usize = 1 << 14;

/// `φ₀(y) = G(2y) − G(y)`, the primitive of `ρ` (`ρ̂ = θ(·/2) − θ`).
pub fn indicator_bump(g: &SmoothHeaviside) -> GridSignal {
    GridSpec { q: IND_Q, n: IND_N, x0: -32.0 }.sample_fn(|y| c(g.eval(2.0 * y) - g.eval(y)))
}

/// Partial sums through `j` of the indicator decomposition against `1_{[0,1]}`,
/// by the midpoint rule on `[−2, 3]` with cells of width `2^{−(j+6)}`.
/// Returns `(L¹, L²)` residuals.
pub fn indicator_residual(terms: &[Term], j: i64) -> (f64, f64) {
    let h = pow2(-(j + 6));
    let n = (5.0 / h) as usize;
    let active: Vec<&Term> = terms.iter().filter(|t| t.group <= j).collect();
    let (l1, l2) = (0..n)
        .into_par_iter()
        .map(|k| {
            let x = -2.0 + (k as f64 + 0.5) * h;
            let mut v = C64::new(0.0, 0.0);
            for t in &active {
                v += t.eval(x, CertKind::Indicator);
            }
            let ind = if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 };
            let d = (v - ind).norm();
            (d, d * d)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    (l1 * h, (l2 * h).sqrt())
}

/// `1_{[0,1]} = φ + Σ_j 2^{−j} D_{2^{−j}} φ_{0,j} + Σ_j 2^{−j} D_{2^{−j}} φ_{1,j}`
/// truncated at `j_max`, with `φ = 1_{[0,1]} ∗ χ`, `φ_{0,j} = φ₀` the primitive
/// of `ρ` and `φ_{1,j} = −φ₀(· − 2^j)`. The partial sum through `J` is
/// `G(2^{J+1}x) − G(2^{J+1}(x − 1))`.
pub fn indicator_decomposition(j_max: u32) -> Result<DecompositionCertificate> {
    if j_max < 1 || j_max > 20 {
        return Err(DecompError::BadParam(format!("j_max = {j_max} outside 1..=20")));
    }
    let g = SmoothHeaviside::new();
    let grid = GridSpec { q: IND_Q, n: IND_N, x0: -32.0 };
    let phi = grid.sample_fn(|x| c(g.eval(2.0 * x) - g.eval(2.0 * x - 2.0)));
    let phi0 = indicator_bump(&g);
    let base0 = BumpClassSpec::new(BumpClass::S0Plus, 0.0, 2, 4);
    let mut c0 = class_check(&phi0, &base0).worst_ratio;
    let mut terms = vec![Term { coefficient: c(1.0), scale_exp: 0, shift: 0, group: 0, bump: phi, class: None }];
    let mut shifted = Vec::new();
    for j in 1..=j_max as i64 {
        let tau = pow2(j);
        let b1 = GridSignal::new(IND_Q, tau - 32.0, phi0.samples().iter().map(|&z| -z).collect())?;
        let r = class_check(&b1, &BumpClassSpec::new(BumpClass::S0Tau, tau, 2, 4));
        c0 = c0.max(r.worst_ratio);
        shifted.push((j, tau, b1));
    }
    // one constant for the whole family, uniform in j
    let cst = c0 * (1.0 + 1e-9);
    for (j, tau, b1) in shifted {
        terms.push(Term {
            coefficient: c(pow2(-j)),
            scale_exp: -j,
            shift: 0,
            group: j,
            bump: phi0.clone(),
            class: Some(base0.with_constant(cst)),
        });
        terms.push(Term {
            coefficient: c(pow2(-j)),
            scale_exp: -j,
            shift: tau as i64,
            group: j,
            bump: b1,
            class: Some(BumpClassSpec::new(BumpClass::S0Tau, tau, 2, 4).with_constant(cst)),
        });
    }
    let (l1, l2) = indicator_residual(&terms, j_max as i64);
    let mut meta = BTreeMap::new();
    meta.insert("j_max".into(), j_max.to_string());
    meta.insert("bump_grid".into(), format!("q={IND_Q} n={IND_N} x0=-32"));
    meta.insert("residual_grid".into(), "midpoint on [-2,3], width 2^-(J+6)".into());
    meta.insert("class_constant".into(), format!("{cst:e}"));
    meta.insert("table_tail".into(), format!("{:e}", g.tail));
    let cert = DecompositionCertificate { kind: CertKind::Indicator, terms, targets: Vec::new(), residual_l1: l1, residual_l2: l2, meta };
    cert.check_classes()?;
    Ok(cert)
}

/// `ζ` sampled with its transform. The window itself is [`Zeta`]: a multiple of
/// the second derivative of `e^{−1/(1−x²)}`, normalized by its Calderón integral.
#[derive(Clone, Debug)]
pub struct ZetaWindow {
    pub zeta: GridSignal,
    pub zeta_hat: GridSignal,
    window: Zeta,
}

impl ZetaWindow {
    pub fn eval(&self, x: f64) -> f64 {
        self.window.eval(x).re
    }

    pub fn hat(&self, xi: f64) -> f64 {
        self.window.hat(xi).re
    }

    /// `∫₀^∞ |ζ̂(tξ)|² dt/t`
    pub fn calderon(&self, xi: f64) -> f64 {
        let a = xi.abs();
        crate::signal::log_integral(|t| self.hat(t * a).powi(2), 1e-5 / a, 64.0 / a, 20000)
    }
}

pub fn build_zeta() -> Result<ZetaWindow> {
    let window = Zeta::new();
    if !window.normalization().is_finite() {
        return Err(DecompError::BadParam("seed bump has vanishing Calderón integral".into()));
    }
    let zeta = GridSpec { q: 8, n: 1 << 12, x0: -8.0 }.sample(&window);
    let zeta_hat = zeta.fourier();
    Ok(ZetaWindow { zeta, zeta_hat, window })
}

/// `Q(u) = ∫_u^∞ |ζ̂(v)|² dv/v`, tabulated in `log u` and interpolated with
/// cubic Hermite polynomials using `dQ/d log u = −|ζ̂(u)|²`.
#[derive(Clone, Debug)]
pub struct CalderonTail {
    l0: f64,
    h: f64,
    q: Vec<f64>,
    dq: Vec<f64>,
}

impl CalderonTail {
    pub fn new(z: &ZetaWindow) -> Self {
        let (lo, hi) = (1e-5f64.ln(), 64f64.ln());
        let per_octave = 64.0;
        let n = ((hi - lo) / 2f64.ln() * per_octave).ceil() as usize;
        let h = (hi - lo) / n as f64;
        let e = |l: f64| z.hat(l.exp()).powi(2);
        let vals: Vec<f64> = (0..=2 * n).into_par_iter().map(|k| e(lo + k as f64 * h / 2.0)).collect();
        let mut q = vec![0.0; n + 1];
        for k in (0..n).rev() {
            q[k] = q[k + 1] + h / 6.0 * (vals[2 * k] + 4.0 * vals[2 * k + 1] + vals[2 * k + 2]);
        }
        let dq = (0..=n).map(|k| -vals[2 * k]).collect();
        CalderonTail { l0: lo, h, q, dq }
    }

    pub fn eval(&self, u: f64) -> f64 {
        let u = u.abs();
        if u == 0.0 {
            return self.q[0];
        }
        let r = (u.ln() - self.l0) / self.h;
        let n = self.q.len() - 1;
        if r <= 0.0 {
            return self.q[0];
        }
        if r >= n as f64 {
            return 0.0;
        }
        let k = r.floor() as usize;
        let t = r - k as f64;
        let (p0, p1) = (self.q[k], self.q[k + 1]);
        let (m0, m1) = (self.dq[k] * self.h, self.dq[k + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }
}

/// Odd kernel `K(x) = sign(x) κ η(1) g(|x|)` where `g` is `min(1/r, 1)` with the
/// corner at `r = 1` replaced by a smooth blend; paired with `η(t) = η(1) t`.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationKernel {
    pub eta1: f64,
    pub kappa: f64,
    pub corner: f64,
}

impl Default for CalibrationKernel {
    fn default() -> Self {
        CalibrationKernel { eta1: 1.0, kappa: 0.125, corner: 0.25 }
    }
}

impl CalibrationKernel {
    pub fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let r = x.abs();
        let w = self.corner;
        let s = smooth_step((r - (1.0 - w)) / (2.0 * w));
        let g = (1.0 - s) + s / r;
        x.signum() * self.kappa * self.eta1 * g
    }

    pub fn eta(&self) -> ModulusOfContinuity {
        ModulusOfContinuity::power(self.eta1, 1.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DiniParams {
    /// Simpson intervals in `log t` per slab (even).
    pub nodes_per_slab: usize,
    /// Relative L² tolerance for each slab.
    pub tolerance: f64,
}

impl Default for DiniParams {
    fn default() -> Self {
        DiniParams { nodes_per_slab: 32, tolerance: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct DiniPiece {
    pub m: u32,
    pub ell: i64,
    pub coefficient: f64,
    /// `φ_{s,m,ℓ}`, centered near `ℓ`.
    pub bump: GridSignal,
}

#[derive(Clone, Debug)]
pub struct DiniSlab {
    pub m: u32,
    /// `max_ℓ c_{s,m,ℓ} / (2^{−m} η(2^{−m}))`
    pub ratio: f64,
    pub residual_l1: f64,
    pub residual_l2: f64,
    /// Direct quadrature of the slab in frequency.
    pub target: GridSignal,
    pub class_constant: f64,
}

#[derive(Clone, Debug)]
pub struct DiniDecomposition {
    pub s: i64,
    pub eta_factor: f64,
    /// `φ_{s,0}`
    pub smooth: GridSignal,
    pub smooth_class_constant: f64,
    pub pieces: Vec<DiniPiece>,
    pub slabs: Vec<DiniSlab>,
    pub kernel_report: EtaReport,
}

/// Kernel grid: `Δ = 2^{−12}` on `[−8, 8)`.
const DINI_Q: i32 = 12;
const DINI_N: usize = 1 << 16;

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Plans { fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n) }
    }
}

/// Samples of `ζ_t(x) = t^{−1} ζ(x/t)` at `x = dΔ`, stored circularly in a
/// buffer of length `n`. The Riemann sum of `ζ` is only about `1e−7` at coarse
/// sampling, so the discrete mean is projected out along `1 − x²`.
fn zeta_circular(z: &ZetaWindow, t: f64, h: f64, n: usize) -> Vec<C64> {
    let r = (t / h).floor() as i64;
    let mut b = vec![C64::new(0.0, 0.0); n];
    let (mut sum, mut wsum) = (0.0, 0.0);
    let mut vals = Vec::with_capacity(2 * r as usize + 1);
    for d in -r..=r {
        let u = d as f64 * h / t;
        let v = z.eval(u) / t;
        let p = (1.0 - u * u).max(0.0);
        sum += v;
        wsum += p;
        vals.push((d, v, p));
    }
    for (d, v, p) in vals {
        b[d.rem_euclid(n as i64) as usize] = c(v - sum / wsum * p);
    }
    b
}

/// Slices `K_s^t = (Kρ_s) ∗ ζ_t` into the smooth part (`t ≥ 2^s`) and the
/// slabs `t ∈ [2^{s−m}, 2^{s−m+1}]`, `m = 1..=m_max`, each split into cells
/// `|2^{m−s} y − ℓ| ≤ 1/2` (half-open on the right). The work is done at
/// `s = 0` on the rescaled kernel `2^s K(2^s x)`, which satisfies the same
/// bounds; coefficients are scale invariant.
pub fn dini_decompose(
    kernel: &(dyn Fn(f64) -> f64 + Sync),
    eta: &ModulusOfContinuity,
    s: i64,
    m_max: u32,
    zeta: &ZetaWindow,
    params: DiniParams,
) -> Result<DiniDecomposition> {
    if m_max < 1 || m_max > 8 {
        return Err(DecompError::BadParam(format!("m_max = {m_max} outside 1..=8")));
    }
    if params.nodes_per_slab < 2 || params.nodes_per_slab % 2 == 1 {
        return Err(DecompError::BadParam("nodes_per_slab must be even".into()));
    }
    let ks = |x: f64| pow2(s) * kernel(pow2(s) * x);
    let check = GridSpec::centered(8, 1 << 12).sample_fn(|x| c(ks(x)));
    let report = eta_kernel_check(&check, eta);
    if !report.pass {
        return Err(DecompError::Kernel(Box::new(report)));
    }
    let h = pow2(-(DINI_Q as i64));
    let n = DINI_N;
    let grid = GridSpec { q: DINI_Q, n, x0: -8.0 };
    let k0 = grid.sample_fn(|x| c(ks(x) * rho_hat(x)));
    let global = Plans::new(n);
    let mut k0_hat = k0.samples().to_vec();
    global.fwd.process(&mut k0_hat);
    let tail = CalderonTail::new(zeta);
    let eta1 = eta.at_one();

    // smooth part: K₀ ∗ ϕ with ϕ̂ = Q(|ξ|)
    let (_, xi0) = k0.freq_grid();
    let spec = k0.fourier();
    let smooth_spec = spec.with_samples(
        spec.samples().iter().enumerate().map(|(k, &v)| v * tail.eval(spec.x(k))).collect(),
    );
    let _ = xi0;
    let smooth = GridSignal::inverse_fourier(&smooth_spec, k0.origin()).scale(c(1.0 / eta1));
    let sc = class_check(&smooth, &BumpClassSpec::new(BumpClass::S0, 0.0, 2, 4)).worst_ratio * (1.0 + 1e-9);
    if !class_check(&smooth, &BumpClassSpec::new(BumpClass::S0, 0.0, 2, 4).with_constant(sc)).pass {
        return Err(DecompError::ClassCheck("smooth part is not mean zero".into()));
    }

    let mut pieces = Vec::new();
    let mut slabs = Vec::new();
    for m in 1..=m_max {
        let nt = params.nodes_per_slab;
        let ht = 2f64.ln() / nt as f64;
        let cell = 1usize << (DINI_Q as u32 - m);
        let big_r = 1usize << (DINI_Q as u32 + 1 - m);
        let lf = (cell + 2 * big_r + 1).next_power_of_two();
        let local = Plans::new(lf);
        // cells meeting the support |y| ≤ 3 of K₀^t
        let lmax = ((3.0 * pow2(m as i64)).ceil() as i64 + 1).min(10 * (1i64 << m));
        let ells: Vec<i64> = (-lmax..=lmax).collect();
        let mut acc: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); lf]; ells.len()];
        let mut coef = vec![0.0f64; ells.len()];
        let start = |ell: i64| -> i64 {
            // global index of y = (ℓ − 1/2) 2^{−m}
            (((ell as f64 - 0.5) * pow2(-(m as i64)) + 8.0) / h).round() as i64
        };
        for i in 0..=nt {
            let w = ht / 3.0
                * if i == 0 || i == nt {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
            let t = pow2(-(m as i64)) * 2f64.powf(i as f64 / nt as f64);
            let mut zb = zeta_circular(zeta, t, h, n);
            global.fwd.process(&mut zb);
            let mut kt: Vec<C64> = k0_hat.iter().zip(&zb).map(|(a, b)| a * b).collect();
            global.inv.process(&mut kt);
            let supp = 2.0 + t;
            for (k, v) in kt.iter_mut().enumerate() {
                let y = grid.x(k);
                *v = if y.abs() <= supp { c(v.re * h / n as f64) } else { C64::new(0.0, 0.0) };
            }
            let mut zl = zeta_circular(zeta, t, h, lf);
            local.fwd.process(&mut zl);
            let kt = &kt;
            let zl = &zl;
            let local = &local;
            acc.par_iter_mut().zip(coef.par_iter_mut()).zip(ells.par_iter()).for_each(|((a, cf), &ell)| {
                let g0 = start(ell);
                let w0 = g0 - big_r as i64;
                let mut buf = vec![C64::new(0.0, 0.0); lf];
                let mut mass = 0.0;
                for k in g0..g0 + cell as i64 {
                    if (0..n as i64).contains(&k) {
                        let v = kt[k as usize];
                        buf[(k - w0) as usize] = v;
                        mass += v.norm();
                    }
                }
                if mass == 0.0 {
                    return;
                }
                *cf += w * mass * h;
                local.fwd.process(&mut buf);
                for ((x, b), z) in a.iter_mut().zip(&buf).zip(zl) {
                    *x += b * z * w;
                }
            });
        }
        // assemble the slab and its pieces
        let mut rec = vec![C64::new(0.0, 0.0); n];
        let mut ratio = 0.0f64;
        let mut cst = 0.0f64;
        let bound = pow2(-(m as i64)) * eta.eval(pow2(-(m as i64)));
        let mut slab_pieces = Vec::new();
        for ((a, &cf), &ell) in acc.iter_mut().zip(&coef).zip(&ells) {
            if cf == 0.0 {
                continue;
            }
            local.inv.process(a);
            let w0 = start(ell) - big_r as i64;
            let scale = h / lf as f64;
            for (i, v) in a.iter_mut().enumerate() {
                *v *= scale;
                let k = w0 + i as i64;
                if (0..n as i64).contains(&k) {
                    rec[k as usize] += *v;
                }
            }
            ratio = ratio.max(cf / bound);
            let x0 = grid.x0 + w0 as f64 * h;
            let bump = GridSignal::new(
                DINI_Q - m as i32,
                pow2(m as i64) * x0,
                a.iter().map(|v| v * (pow2(-(m as i64)) / cf)).collect(),
            )?;
            let r = class_check(&bump, &BumpClassSpec::new(BumpClass::S0Tau, ell as f64, 2, 4));
            if !r.mean_ok {
                return Err(DecompError::ClassCheck(format!("piece (m={m}, l={ell}) has mean {:e}", r.mean)));
            }
            cst = cst.max(r.worst_ratio);
            slab_pieces.push(DiniPiece { m, ell, coefficient: cf, bump });
        }
        // oracle: K̂₀ (Q(2^{−m}|ξ|) − Q(2^{1−m}|ξ|))
        let tspec = spec.with_samples(
            spec.samples()
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let xi = spec.x(k).abs();
                    v * (tail.eval(pow2(-(m as i64)) * xi) - tail.eval(pow2(1 - m as i64) * xi))
                })
                .collect(),
        );
        let target = GridSignal::inverse_fourier(&tspec, k0.origin());
        let rec = k0.with_samples(rec);
        let d = rec.sub(&target);
        let l2 = d.l2() / target.l2().max(1e-300);
        let l1 = d.l1() / target.l1().max(1e-300);
        if l2 > params.tolerance {
            return Err(DecompError::Residual { what: format!("slab m={m}"), value: l2, tol: params.tolerance });
        }
        pieces.extend(slab_pieces);
        slabs.push(DiniSlab { m, ratio, residual_l1: l1, residual_l2: l2, target, class_constant: cst * (1.0 + 1e-9) });
    }
    Ok(DiniDecomposition {
        s,
        eta_factor: eta1,
        smooth,
        smooth_class_constant: sc,
        pieces,
        slabs,
        kernel_report: report,
    })
}

impl DiniDecomposition {
    /// `c_{s,m,ℓ}`; zero for cells the kernel does not reach and for `|ℓ| > 10·2^m`.
    pub fn coefficient(&self, m: u32, ell: i64) -> f64 {
        self.pieces.iter().find(|p| p.m == m && p.ell == ell).map_or(0.0, |p| p.coefficient)
    }

    /// Worst ratio `max_ℓ c / (2^{−m} η(2^{−m}))` over all slabs.
    pub fn coefficient_constant(&self) -> f64 {
        self.slabs.iter().map(|s| s.ratio).fold(0.0, f64::max)
    }

    pub fn certificate(&self) -> DecompositionCertificate {
        let mut terms = vec![Term {
            coefficient: c(self.eta_factor),
            scale_exp: self.s,
            shift: 0,
            group: 0,
            bump: self.smooth.clone(),
            class: Some(BumpClassSpec::new(BumpClass::S0, 0.0, 2, 4).with_constant(self.smooth_class_constant)),
        }];
        for p in &self.pieces {
            let cst = self.slabs.iter().find(|s| s.m == p.m).map_or(1.0, |s| s.class_constant);
            terms.push(Term {
                coefficient: c(p.coefficient),
                scale_exp: -(p.m as i64),
                shift: p.ell,
                group: p.m as i64,
                bump: p.bump.clone(),
                class: Some(BumpClassSpec::new(BumpClass::S0Tau, p.ell as f64, 2, 4).with_constant(cst)),
            });
        }
        let targets = self.slabs.iter().map(|s| (format!("slab {}", s.m), s.target.clone())).collect();
        let mut meta = BTreeMap::new();
        meta.insert("s".into(), self.s.to_string());
        meta.insert("kernel_grid".into(), format!("q={DINI_Q} n={DINI_N} x0=-8"));
        meta.insert("coefficient_constant".into(), format!("{:e}", self.coefficient_constant()));
        meta.insert("note".into(), "computed at s = 0 on the rescaled kernel".into());
        let mut cert = DecompositionCertificate {
            kind: CertKind::Dini,
            terms,
            targets,
            residual_l1: 0.0,
            residual_l2: 0.0,
            meta,
        };
        let (l1, l2) = cert.recompute_residuals().expect("dini certificates carry their slab targets");
        cert.residual_l1 = l1;
        cert.residual_l2 = l2;
        cert
    }
}

/// `∫₀¹ η(t)^p |log t|^{4p} t^{p−2} dt` to the power `1/p` (`p = 1`: the plain
/// Dini condition), via `u = −log t` and Simpson's rule. Returns infinity when
/// the substituted integrand has not decayed by `u = 700`, the last point where
/// `e^{−u}` is a normal double.
pub fn dini_norm(eta: &dyn Fn(f64) -> f64, p: Option<f64>) -> f64 {
    let p = p.unwrap_or(1.0);
    assert!(p > 0.0 && p <= 1.0, "p must lie in (0, 1]");
    let f = |u: f64| -> f64 {
        let e = eta((-u).exp()).max(0.0);
        if e == 0.0 {
            return 0.0;
        }
        (p * e.ln() + 4.0 * p * u.max(1e-300).ln() - u * (p - 1.0)).exp()
    };
    let mut upper = 200.0;
    loop {
        let n = ((upper * 100.0) as usize).min(1 << 21);
        let n = n + n % 2;
        let h = upper / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * f(k as f64 * h);
        }
        acc *= h / 3.0;
        let tail = f(upper) * upper;
        if !(tail > 1e-13 * acc) {
            return acc.powf(1.0 / p);
        }
        if upper >= 700.0 {
            return f64::INFINITY;
        }
        upper = (upper * 2.0).min(700.0);
    }
}

/// [`dini_norm`] for a sampled modulus of continuity.
pub fn dini_norm_modulus(eta: &ModulusOfContinuity, p: Option<f64>) -> f64 {
    dini_norm(&|t| eta.eval(t), p)
}

/// `ψ̂ = ρ_{−4} + ρ_{−3} + ρ_{−2}`, equal to 1 on `supp ρ_{−3}`.
pub fn psi_hat(xi: f64) -> f64 {
    rho_k(-4, xi) + rho_k(-3, xi) + rho_k(-2, xi)
}

#[derive(Clone, Debug)]
pub struct Localized {
    pub s: i64,
    /// `m_s` on `[−1/2, 1/2)`.
    pub m_s: GridSignal,
    /// `m̂_s(ℓ)` for `|ℓ| < n/2`.
    pub coeffs: BTreeMap<i64, C64>,
}

impl Localized {
    pub fn coeff(&self, ell: i64) -> C64 {
        self.coeffs.get(&ell).copied().unwrap_or_default()
    }

    /// `ψ̂(ξ) Σ_{|ℓ|≤L} m̂_s(ℓ) e^{2πiℓξ}`
    pub fn partial_sum(&self, xi: f64, cap: i64) -> C64 {
        let p = psi_hat(xi);
        if p == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let mut acc = C64::new(0.0, 0.0);
        for (&l, &v) in self.coeffs.range(-cap..=cap) {
            acc += v * crate::signal::cis(l as f64 * xi);
        }
        acc * p
    }

    /// Sup of `|m_s − ψ̂ S_L|` over the sample grid and a band around it.
    pub fn reconstruction_residual(&self, m: &dyn Fn(f64) -> C64, cap: i64) -> f64 {
        let s = self.s;
        (0..2048)
            .map(|k| {
                let xi = -0.75 + 1.5 * (k as f64 + 0.37) / 2048.0;
                let exact = m(xi * pow2(-s)) * rho_k(-3, xi);
                (exact - self.partial_sum(xi, cap)).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `m_s(ξ) = m(2^{−s}ξ) ρ_{−3}(ξ)` and its Fourier series on `[−1/2, 1/2]`,
/// with `n` samples.
pub fn multiplier_localize(m: &dyn Fn(f64) -> C64, s: i64, n: usize) -> Result<Localized> {
    if !n.is_power_of_two() || n < 16 {
        return Err(DecompError::BadParam(format!("sample count {n} is not a power of two >= 16")));
    }
    let q = n.trailing_zeros() as i32;
    let m_s = GridSignal::from_fn(q, -0.5, n, |xi| m(xi * pow2(-s)) * rho_k(-3, xi))?;
    let spec = m_s.fourier();
    let coeffs = (0..spec.len())
        .map(|k| (spec.x(k).round() as i64, spec.samples()[k]))
        .collect();
    Ok(Localized { s, m_s, coeffs })
}

/// The certificate `m_s = Σ_{|ℓ|≤L} m̂_s(ℓ) e^{2πiℓ·} ψ̂` on the frequency grid.
pub fn hormander_certificate(m: &dyn Fn(f64) -> C64, s: i64, cap: i64) -> Result<DecompositionCertificate> {
    let loc = multiplier_localize(m, s, 1 << 11)?;
    let grid = GridSpec { q: 10, n: 1 << 10, x0: -0.5 };
    let target = grid.sample_fn(|xi| m(xi * pow2(-s)) * rho_k(-3, xi));
    let terms: Vec<Term> = loc
        .coeffs
        .range(-cap..=cap)
        .map(|(&l, &v)| Term {
            coefficient: v,
            scale_exp: s,
            shift: l,
            group: s,
            bump: grid.sample_fn(|xi| crate::signal::cis(l as f64 * xi) * psi_hat(xi)),
            class: None,
        })
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert("s".into(), s.to_string());
    meta.insert("cap".into(), cap.to_string());
    meta.insert("frequency_grid".into(), "q=10 n=1024 x0=-0.5".into());
    let mut cert = DecompositionCertificate {
        kind: CertKind::Hormander,
        terms,
        targets: vec![("m_s".into(), target)],
        residual_l1: 0.0,
        residual_l2: 0.0,
        meta,
    };
    let (l1, l2) = cert.recompute_residuals()?;
    cert.residual_l1 = l1;
    cert.residual_l2 = l2;
    Ok(cert)
}

/// `A(0) = (−1, 1)`, `A(a) = {2^{a−1} ≤ |x| ≤ 2^a}`.
pub fn in_annulus(a: i64, x: f64) -> bool {
    let r = x.abs();
    if a == 0 {
        r < 1.0
    } else {
        r >= pow2(a - 1) && r <= pow2(a)
    }
}

/// `W_a = C (1 + a⁵) Σ_b (1 + |b − a|)^{−10} w_b / (1 + b⁵)`
pub fn pigeonhole_weight(a: i64, w: &[f64], constant: f64) -> f64 {
    let a5 = 1.0 + (a as f64).powi(5);
    constant
        * a5
        * w.iter()
            .enumerate()
            .map(|(b, &wb)| wb / ((1.0 + (b as f64 - a as f64).abs()).powi(10) * (1.0 + (b as f64).powi(5))))
            .sum::<f64>()
}

/// Whether `Σ_{ℓ∈A(a)} |m̂_s(ℓ)| ≤ W_a / (1 + a⁵)` for every `a` with weights.
pub fn sum_ell_holds(coeffs: &BTreeMap<i64, C64>, w: &[f64], constant: f64) -> bool {
    (0..w.len() as i64).all(|a| {
        let mass: f64 = coeffs.iter().filter(|(&l, _)| in_annulus(a, l as f64)).map(|(_, v)| v.norm()).sum();
        mass <= pigeonhole_weight(a, w, constant) / (1.0 + (a as f64).powi(5)) * (1.0 + 1e-12)
    })
}

/// `L(a, j) = {ℓ ∈ A(a) : 2^{−j−1} W_a/(1+a⁵) < |m̂_s(ℓ)| ≤ 2^{−j} W_a/(1+a⁵)}`.
///
/// When the summed bound holds for `a` the count is checked against `2^{j+1}`
/// and against `|A(a) ∩ Z|`.
pub fn pigeonhole_classes(coeffs: &BTreeMap<i64, C64>, a: i64, j: i64, w: &[f64], constant: f64) -> Result<Vec<i64>> {
    if a < 0 || j < 0 {
        return Err(DecompError::BadParam(format!("a = {a}, j = {j} must be nonnegative")));
    }
    let level = pigeonhole_weight(a, w, constant) / (1.0 + (a as f64).powi(5));
    let (lo, hi) = (pow2(-j - 1) * level, pow2(-j) * level);
    let set: Vec<i64> = coeffs
        .iter()
        .filter(|(&l, v)| in_annulus(a, l as f64) && v.norm() > lo && v.norm() <= hi)
        .map(|(&l, _)| l)
        .collect();
    let mass: f64 = coeffs.iter().filter(|(&l, _)| in_annulus(a, l as f64)).map(|(_, v)| v.norm()).sum();
    if mass <= level * (1.0 + 1e-12) {
        let lattice = if a == 0 { 1 } else { 2 * ((1usize << a) - (1usize << (a - 1)) + 1) };
        let bound = (1usize << (j + 1).min(62)).min(lattice);
        if set.len() > bound {
            return Err(DecompError::Cardinality { a, j, count: set.len(), bound });
        }
    }
    Ok(set)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiplierNorms {
    pub h_sigma: f64,
    pub y_w: f64,
    pub y_w_p: f64,
}

/// Localizing bump: 1 on `1/2 ≤ |ξ| ≤ 2`, supported in `1/4 ≤ |ξ| ≤ 4`.
pub fn scale_cutoff(xi: f64) -> f64 {
    theta(xi / 4.0) * (1.0 - theta(2.0 * xi))
}

/// `(∫ |ĝ(x)|² (1 + x²)^σ dx)^{1/2}` for `ĝ` sampled in space.
pub fn h_sigma_of(ghat: &GridSignal, sigma: f64) -> f64 {
    let h = ghat.step();
    (ghat.samples().iter().enumerate().map(|(k, v)| v.norm_sqr() * (1.0 + ghat.x(k).powi(2)).powf(sigma)).sum::<f64>() * h).sqrt()
}

fn annulus_masses(ghat: &GridSignal, p: f64, amax: usize) -> Vec<f64> {
    let h = ghat.step();
    let mut out = vec![0.0; amax + 1];
    for (k, v) in ghat.samples().iter().enumerate() {
        let x = ghat.x(k);
        for (a, o) in out.iter_mut().enumerate() {
            if in_annulus(a as i64, x) {
                *o += v.norm().powf(p) * h;
            }
        }
    }
    out
}

/// `sup_a (1 + a⁵)/w_a ∫_{A(a)} |ĝ|`
pub fn y_w_of(ghat: &GridSignal, w: &[f64]) -> f64 {
    annulus_masses(ghat, 1.0, w.len() - 1)
        .iter()
        .enumerate()
        .map(|(a, &m)| (1.0 + (a as f64).powi(5)) / w[a] * m)
        .fold(0.0, f64::max)
}

/// `sup_a ((1 + a^{4p+1})/w_a^p ∫_{A(a)} |ĝ|^p)^{1/p}`
pub fn y_w_p_of(ghat: &GridSignal, w: &[f64], p: f64) -> f64 {
    annulus_masses(ghat, p, w.len() - 1)
        .iter()
        .enumerate()
        .map(|(a, &m)| ((1.0 + (a as f64).powf(4.0 * p + 1.0)) / w[a].powf(p) * m).powf(1.0 / p))
        .fold(0.0, f64::max)
}

/// Cauchy–Schwarz constant `C` with `‖g‖_{Y_w} ≤ C ‖g‖_{H^σ}` over the
/// annuli `a < w.len()`: `sup_a (1+a⁵)/w_a (|A(a)| sup_{A(a)} (1+x²)^{−σ})^{1/2}`.
/// `slack` is added to each annulus length to cover grid rounding.
pub fn embedding_constant(w: &[f64], sigma: f64, slack: f64) -> f64 {
    w.iter()
        .enumerate()
        .map(|(a, &wa)| {
            let (len, inner) = if a == 0 { (2.0, 0.0) } else { (pow2(a as i64), pow2(a as i64 - 1)) };
            (1.0 + (a as f64).powi(5)) / wa * ((len + slack) * (1.0 + inner * inner).powf(-sigma)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Scale-invariant norms `sup_s ‖g_s‖` with `g_s(ξ) = m(2^s ξ) φ(ξ)`. The
/// weights must cover every annulus the spatial grid reaches (`a ≤ 6`).
pub fn multiplier_norms(
    m: &dyn Fn(f64) -> C64,
    s_range: std::ops::RangeInclusive<i64>,
    sigma: f64,
    w: &[f64],
    p: f64,
) -> Result<MultiplierNorms> {
    if w.len() < 7 || w.iter().any(|&x| x <= 0.0) {
        return Err(DecompError::BadParam("need positive weights for a = 0..=6".into()));
    }
    let grid = GridSpec { q: 7, n: 1 << 11, x0: -8.0 };
    let mut out = MultiplierNorms { h_sigma: 0.0, y_w: 0.0, y_w_p: 0.0 };
    for s in s_range {
        let g = grid.sample_fn(|xi| m(pow2(s) * xi) * scale_cutoff(xi));
        let gh = g.fourier();
        out.h_sigma = out.h_sigma.max(h_sigma_of(&gh, sigma));
        out.y_w = out.y_w.max(y_w_of(&gh, w));
        out.y_w_p = out.y_w_p.max(y_w_p_of(&gh, w, p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_examples() {
        let p = build_lp_partition(20).unwrap();
        assert_abs_diff_eq!(p.partial_sum(1.0, 20), 1.0, epsilon = 1e-10);
        assert_eq!(rho_hat(0.3), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let band = p.resolved_band();
        for _ in 0..100 {
            let xi = rng.random_range(-band..band);
            assert_abs_diff_eq!(p.partial_sum(xi, 20), 1.0, epsilon = 1e-10);
        }
        assert!(build_lp_partition(0).is_err());
    }

    #[test]
    fn smooth_heaviside_table() {
        let g = SmoothHeaviside::new();
        assert!(g.tail < 1e-9, "tail {}", g.tail);
        assert_abs_diff_eq!(g.eval(0.0), 0.5, epsilon = 1e-12);
        for y in [0.3, 1.7, 5.0, 20.0] {
            assert_abs_diff_eq!(g.eval(y) + g.eval(-y), 1.0, epsilon = 1e-12);
        }
        // χ_θ(0) = ∫θ = 3/2 since each edge satisfies s(x) + s(1 − x) = 1
        assert_abs_diff_eq!(g.density(0.0), 1.5, epsilon = 1e-10);
    }

    #[test]
    fn indicator_terms_by_construction() {
        let cert = indicator_decomposition(6).unwrap();
        for j in 1..=6 {
            let ts: Vec<&Term> = cert.terms.iter().filter(|t| t.group == j).collect();
            assert_eq!(ts.len(), 2);
            // φ_{1,j}(x) + φ_{0,j}(x − 2^j) = 0 sample by sample
            assert_eq!(ts[1].bump.origin(), ts[0].bump.origin() + pow2(j));
            for (a, b) in ts[0].bump.samples().iter().zip(ts[1].bump.samples()) {
                assert_eq!(*a + *b, C64::new(0.0, 0.0));
            }
            assert!(ts[0].bump.integral().norm() < 1e-10);
        }
        cert.verify().unwrap();
    }

    #[test]
    fn indicator_residual_halves() {
        let cert = indicator_decomposition(9).unwrap();
        let mut prev = None;
        for j in 4..=9 {
            let (l1, _) = indicator_residual(&cert.terms, j);
            if let Some(p) = prev {
                let r: f64 = l1 / p;
                assert!((0.4..=0.6).contains(&r), "J={j} ratio {r}");
            }
            prev = Some(l1);
        }
    }

    #[test]
    fn certificate_round_trip() {
        let cert = indicator_decomposition(3).unwrap();
        let mut buf = Vec::new();
        cert.write(&mut buf).unwrap();
        let back = DecompositionCertificate::read(&buf[..]).unwrap();
        assert_eq!(back.terms.len(), cert.terms.len());
        assert_eq!(back.residual_l1, cert.residual_l1);
        back.verify().unwrap();
        let mut bad = back.clone();
        bad.residual_l1 *= 2.0;
        assert!(bad.verify().is_err());
        assert!(DecompositionCertificate::read(&b"kind = indicator\n"[..]).is_err());
    }

    #[test]
    fn zeta_normalization() {
        let z = build_zeta().unwrap();
        assert_abs_diff_eq!(z.calderon(1.0), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(z.calderon(2.0), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(z.calderon(-0.7), 1.0, epsilon = 1e-8);
        assert!(z.zeta.integral().norm() < 1e-12);
        assert_abs_diff_eq!(z.eval(0.4), z.eval(-0.4), epsilon = 0.0);
        assert_eq!(z.eval(1.2), 0.0);
        let t = CalderonTail::new(&z);
        assert_abs_diff_eq!(t.eval(1e-9), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(t.eval(0.8), z.calderon(1.0) - crate::signal::log_integral(|u| z.hat(u).powi(2), 1e-5, 0.8, 20000), epsilon = 1e-8);
    }

    #[test]
    fn calibration_kernel_passes_check() {
        let k = CalibrationKernel::default();
        let g = GridSpec::centered(8, 1 << 12).sample_fn(|x| c(k.eval(x)));
        let r = eta_kernel_check(&g, &k.eta());
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn dini_small_decomposition() {
        let k = CalibrationKernel::default();
        let z = build_zeta().unwrap();
        let d = dini_decompose(&|x| k.eval(x), &k.eta(), 0, 2, &z, DiniParams::default()).unwrap();
        for s in &d.slabs {
            assert!(s.residual_l2 <= 1e-5, "slab {} residual {}", s.m, s.residual_l2);
        }
        assert_eq!(d.coefficient(2, 41), 0.0);
        assert_eq!(d.coefficient(1, 9), 0.0);
        assert!(d.coefficient(1, 2) > 0.0);
        let cert = d.certificate();
        cert.verify().unwrap();
    }

    #[test]
    fn dini_norm_closed_forms() {
        for alpha in [0.5f64, 1.0, 2.0] {
            let v = dini_norm(&|t| t.powf(alpha), None);
            assert_abs_diff_eq!(v * alpha.powi(5), 24.0, epsilon = 1e-6);
            assert_abs_diff_eq!(dini_norm(&|t| t.powf(alpha), Some(1.0)), v, epsilon = 0.0);
        }
        assert_eq!(dini_norm(&|_| 0.0, None), 0.0);
        assert!(dini_norm(&|_| 1.0, None).is_infinite());
        // p = 1/2, η = t²: (∫ u² e^{−u/2} du)² = (2!·2³)² = 256
        assert_abs_diff_eq!(dini_norm(&|t| t * t, Some(0.5)), 256.0, epsilon = 1e-6);
        // η = t at p = 1/2 leaves ∫ u² du
        assert!(dini_norm(&|t| t, Some(0.5)).is_infinite());
    }

    #[test]
    fn localization_of_constant_multiplier() {
        let loc = multiplier_localize(&|_| c(1.0), 0, 1 << 11).unwrap();
        for k in 0..loc.m_s.len() {
            let xi = loc.m_s.x(k);
            assert_eq!(loc.m_s.samples()[k].re, rho_k(-3, xi));
            if xi.abs() > 0.25 {
                assert_eq!(loc.m_s.samples()[k].re, 0.0);
            }
        }
        // independent quadrature of ∫ ρ_{−3}(ξ) cos(2πℓξ) dξ
        for ell in [0i64, 1, 3, 10, 40] {
            let n = 1 << 16;
            let (a, b) = (1.0 / 16.0, 0.25);
            let h = (b - a) / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let x = a + k as f64 * h;
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * rho_k(-3, x) * (TWO_PI * ell as f64 * x).cos();
            }
            let exact = 2.0 * acc * h / 3.0;
            assert_abs_diff_eq!(loc.coeff(ell).re, exact, epsilon = 1e-10);
            assert_abs_diff_eq!(loc.coeff(ell).im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn series_reconstruction_and_concentration() {
        let m = |xi: f64| crate::signal::cis(5.0 * xi) * (1.0 + 0.3 * (xi * 3.0).sin());
        let loc = multiplier_localize(&m, 0, 1 << 11).unwrap();
        let mut prev = f64::INFINITY;
        for cap in [8i64, 32, 128, 256] {
            let r = loc.reconstruction_residual(&m, cap);
            assert!(r <= prev * (1.0 + 1e-9), "cap {cap}: {r} after {prev}");
            prev = r;
        }
        assert!(prev < 1e-6, "{prev}");
        let best = loc.coeffs.iter().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
        assert_eq!(*best.0, 5);
        let cert = hormander_certificate(&m, 0, 256).unwrap();
        assert!(cert.residual_l2 < 1e-6);
        cert.verify().unwrap();
    }

    #[test]
    fn pigeonhole_partition_and_bounds() {
        let w: Vec<f64> = (0..12).map(|a| pow2(-(a as i64) - 1)).collect();
        let empty = BTreeMap::new();
        for a in 0..8 {
            for j in 0..8 {
                assert!(pigeonhole_classes(&empty, a, j, &w, 1.0).unwrap().is_empty());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut coeffs: BTreeMap<i64, C64> = BTreeMap::new();
            for l in -1024i64..=1024 {
                coeffs.insert(l, C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            }
            // rescale each annulus to satisfy the summed bound
            for a in 0..11i64 {
                let level = pigeonhole_weight(a, &w, 1.0) / (1.0 + (a as f64).powi(5));
                let keys: Vec<i64> = coeffs.keys().copied().filter(|&l| in_annulus(a, l as f64)).collect();
                let mass: f64 = keys.iter().map(|l| coeffs[l].norm()).sum();
                let f = rng.random_range(0.1..1.0) * level / mass;
                for l in keys {
                    // boundary points belong to two annuli; shrink only
                    let v = coeffs[&l] * f.min(1.0);
                    coeffs.insert(l, v);
                }
            }
            if !sum_ell_holds(&coeffs, &w[..11], 1.0) {
                continue;
            }
            for a in 1..11 {
                let mut seen = std::collections::BTreeSet::new();
                for j in 0..60 {
                    let l = pigeonhole_classes(&coeffs, a, j, &w, 1.0).unwrap();
                    for x in l {
                        assert!(seen.insert(x), "classes overlap at {x}");
                    }
                }
                let nonzero = coeffs.iter().filter(|(&l, v)| in_annulus(a, l as f64) && v.norm() > 0.0).count();
                assert!(seen.len() <= nonzero);
            }
        }
    }

    #[test]
    fn norm_examples() {
        let w: Vec<f64> = (0..7).map(|a| pow2(-(a as i64) - 1)).collect();
        let z = multiplier_norms(&|_| C64::new(0.0, 0.0), -2..=2, 0.6, &w, 0.5).unwrap();
        assert_eq!(z, MultiplierNorms { h_sigma: 0.0, y_w: 0.0, y_w_p: 0.0 });
        let ghat = GridSpec { q: 6, n: 1 << 10, x0: -8.0 }.sample_fn(|x| c(if x.abs() < 1.0 { 1.0 } else { 0.0 }));
        let mass = ghat.l1();
        assert_abs_diff_eq!(y_w_of(&ghat, &w), 2.0 * mass, epsilon = 1e-12);
    }

    #[test]
    fn embedding_ratio_bounded() {
        let cst = 1.0 / (1.0 + std::f64::consts::PI * std::f64::consts::PI / 6.0);
        let w: Vec<f64> = (0..7).map(|a: i32| cst / (a.max(1) as f64).powi(2)).collect();
        let ms: Vec<Box<dyn Fn(f64) -> C64>> = vec![
            Box::new(|xi: f64| c(theta(xi / 3.0))),
            Box::new(|xi: f64| c(plateau(xi, 0.2, 1.5, 0.4))),
            Box::new(|xi: f64| crate::signal::cis(0.5 * xi) * plateau(xi, -1.0, 1.0, 0.7)),
        ];
        for m in &ms {
            let n = multiplier_norms(m.as_ref(), -3..=3, 0.6, &w, 0.5).unwrap();
            assert!(n.h_sigma > 0.0);
            assert!(n.y_w <= embedding_constant(&w, 0.6, 4.0 / 16.0) * n.h_sigma, "{n:?}");
        }
    }
}
