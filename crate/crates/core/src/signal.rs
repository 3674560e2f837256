//! Functions on a truncated uniform grid, continuous Fourier transforms,
//! bilinear averages, bump-class checks and shifted maximal functions.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

pub type C64 = Complex64;

pub const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("grid length {0} is not a power of two >= 2")]
    BadLength(usize),
    #[error("scale t={t} leaves only {samples:.1} samples across the averaging window (need 8)")]
    Unresolved { t: f64, samples: f64 },
    #[error("grids differ: step {0} vs {1}")]
    GridMismatch(f64, f64),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed data: {0}")]
    Malformed(String),
}

/// `e^{2πi θ}`
pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, TWO_PI * theta)
}

pub fn fft_inplace(buf: &mut [C64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    fft.process(buf);
}

/// A function known both in space and in frequency.
pub trait Func: Send + Sync {
    fn eval(&self, x: f64) -> C64;
    fn hat(&self, xi: f64) -> C64;
    /// Interval outside which the function is negligible.
    fn support(&self) -> (f64, f64);
}

/// Complex samples `f(x0 + kΔ)`, `k < N`, with `Δ = 2^{−q}`.
#[derive(Clone, Debug)]
pub struct GridSignal {
    q: i32,
    x0: f64,
    samples: Vec<C64>,
    spectrum: OnceLock<Vec<C64>>,
}

impl PartialEq for GridSignal {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q && self.x0 == other.x0 && self.samples == other.samples
    }
}

fn is_pow2(n: usize) -> bool {
    n >= 2 && n.is_power_of_two()
}

impl GridSignal {
    pub fn new(q: i32, x0: f64, samples: Vec<C64>) -> Result<Self, SignalError> {
        if !is_pow2(samples.len()) {
            return Err(SignalError::BadLength(samples.len()));
        }
        Ok(GridSignal {
            q,
            x0,
            samples,
            spectrum: OnceLock::new(),
        })
    }

    pub fn from_fn(q: i32, x0: f64, n: usize, f: impl Fn(f64) -> C64) -> Result<Self, SignalError> {
        let step = 2f64.powi(-q);
        Self::new(q, x0, (0..n).map(|k| f(x0 + k as f64 * step)).collect())
    }

    pub fn from_func(f: &dyn Func, q: i32, x0: f64, n: usize) -> Result<Self, SignalError> {
        Self::from_fn(q, x0, n, |x| f.eval(x))
    }

    /// Grid with the same layout as `self` and new samples.
    pub fn with_samples(&self, samples: Vec<C64>) -> GridSignal {
        assert_eq!(samples.len(), self.samples.len());
        GridSignal {
            q: self.q,
            x0: self.x0,
            samples,
            spectrum: OnceLock::new(),
        }
    }

    pub fn zeros_like(&self) -> GridSignal {
        self.with_samples(vec![C64::new(0.0, 0.0); self.len()])
    }

    pub fn q(&self) -> i32 {
        self.q
    }

    pub fn step(&self) -> f64 {
        2f64.powi(-self.q)
    }

    pub fn origin(&self) -> f64 {
        self.x0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.step()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x0, self.x0 + self.len() as f64 * self.step())
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn same_grid(&self, other: &GridSignal) -> bool {
        self.q == other.q && self.x0 == other.x0 && self.len() == other.len()
    }

    pub fn integral(&self) -> C64 {
        self.samples.iter().sum::<C64>() * self.step()
    }

    pub fn l1(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).sum::<f64>() * self.step()
    }

    pub fn l2(&self) -> f64 {
        (self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.step()).sqrt()
    }

    pub fn lp(&self, p: f64) -> f64 {
        (self.samples.iter().map(|z| z.norm().powf(p)).sum::<f64>() * self.step()).powf(1.0 / p)
    }

    pub fn sup(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `⟨f, g⟩ = ∫ f ḡ`
    pub fn inner(&self, other: &GridSignal) -> C64 {
        assert!(self.same_grid(other));
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a * b.conj())
            .sum::<C64>()
            * self.step()
    }

    pub fn sub(&self, other: &GridSignal) -> GridSignal {
        assert!(self.same_grid(other));
        self.with_samples(self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &GridSignal) -> GridSignal {
        assert!(self.same_grid(other));
        self.with_samples(self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: C64) -> GridSignal {
        self.with_samples(self.samples.iter().map(|a| a * c).collect())
    }

    /// Index `k` with `x = x0 + kΔ`, if `x` is a grid point.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let r = (x - self.x0) / self.step();
        let k = r.round();
        if (r - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < self.len() {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Frequency step `1/(NΔ)` and first frequency `−1/(2Δ)`.
    pub fn freq_grid(&self) -> (f64, f64) {
        let dxi = 1.0 / (self.len() as f64 * self.step());
        (dxi, -0.5 / self.step())
    }

    fn spectrum_vec(&self) -> &Vec<C64> {
        self.spectrum.get_or_init(|| {
            let n = self.len();
            let dx = self.step();
            let (dxi, xi0) = self.freq_grid();
            let mut buf: Vec<C64> = self
                .samples
                .iter()
                .enumerate()
                .map(|(k, &v)| if k % 2 == 0 { v } else { -v })
                .collect();
            fft_inplace(&mut buf, false);
            for (m, z) in buf.iter_mut().enumerate() {
                let xi = xi0 + m as f64 * dxi;
                *z *= cis(-xi * self.x0) * dx;
            }
            let _ = n;
            buf
        })
    }

    /// Samples of `f̂(ξ) = ∫ e^{−2πiξx} f(x) dx` on the frequency grid.
    pub fn fourier(&self) -> GridSignal {
        let n = self.len();
        let log2n = n.trailing_zeros() as i32;
        let (_, xi0) = self.freq_grid();
        GridSignal {
            q: log2n - self.q,
            x0: xi0,
            samples: self.spectrum_vec().clone(),
            spectrum: OnceLock::new(),
        }
    }

    /// Inverse of [`GridSignal::fourier`] onto a spatial grid starting at `x0`.
    pub fn inverse_fourier(spec: &GridSignal, x0: f64) -> GridSignal {
        let n = spec.len();
        let log2n = n.trailing_zeros() as i32;
        let q = log2n - spec.q;
        let dx = 2f64.powi(-q);
        let dxi = spec.step();
        let mut buf: Vec<C64> = spec
            .samples
            .iter()
            .enumerate()
            .map(|(m, &v)| v * cis((spec.x0 + m as f64 * dxi) * x0) / dx)
            .collect();
        fft_inplace(&mut buf, true);
        let inv_n = 1.0 / n as f64;
        let samples = buf
            .into_iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { v * inv_n } else { -v * inv_n })
            .collect();
        GridSignal {
            q,
            x0,
            samples,
            spectrum: OnceLock::new(),
        }
    }

    /// `f̂(ξ)` at an arbitrary frequency by direct summation.
    pub fn fourier_at(&self, xi: f64) -> C64 {
        let dx = self.step();
        let rot = cis(-xi * dx);
        let mut ph = cis(-xi * self.x0);
        let mut acc = C64::new(0.0, 0.0);
        for &v in &self.samples {
            acc += v * ph;
            ph *= rot;
        }
        acc * dx
    }

    /// Trigonometric (band-limited) interpolation at an arbitrary point.
    pub fn eval_bandlimited(&self, x: f64) -> C64 {
        if let Some(k) = self.index_of(x) {
            return self.samples[k];
        }
        let spec = self.spectrum_vec();
        let (dxi, xi0) = self.freq_grid();
        let rot = cis(dxi * x);
        let mut ph = cis(xi0 * x);
        let mut acc = C64::new(0.0, 0.0);
        for &v in spec {
            acc += v * ph;
            ph *= rot;
        }
        acc * dxi
    }

    /// `T_τ f(x) = f(x − τ)` via the spectrum (exact roll for grid-aligned `τ`).
    pub fn translate(&self, tau: f64) -> GridSignal {
        let r = tau / self.step();
        if (r - r.round()).abs() < 1e-12 {
            let sh = r.round() as i64;
            let n = self.len() as i64;
            let samples = (0..n)
                .map(|k| {
                    let src = k - sh;
                    if (0..n).contains(&src) {
                        self.samples[src as usize]
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
                .collect();
            return self.with_samples(samples);
        }
        let mut spec = self.fourier();
        let (dxi, xi0) = self.freq_grid();
        for (m, z) in spec.samples.iter_mut().enumerate() {
            *z *= cis(-(xi0 + m as f64 * dxi) * tau);
        }
        GridSignal::inverse_fourier(&spec, self.x0)
    }

    /// Multiplication by `e^{2πiξx}`.
    pub fn modulate(&self, xi: f64) -> GridSignal {
        self.with_samples(
            self.samples
                .iter()
                .enumerate()
                .map(|(k, &v)| v * cis(xi * self.x(k)))
                .collect(),
        )
    }

    /// `D_λ f(x) = λ^{−1} f(x/λ)`, with the L¹ mass of `f` that falls outside the
    /// represented window.
    pub fn dilate(&self, lambda: f64) -> (GridSignal, f64) {
        assert!(lambda > 0.0);
        if lambda == 1.0 {
            return (self.clone(), 0.0);
        }
        let (a, b) = self.domain();
        let samples: Vec<C64> = (0..self.len())
            .map(|k| {
                let u = self.x(k) / lambda;
                if u < a || u >= b {
                    C64::new(0.0, 0.0)
                } else {
                    self.eval_bandlimited(u) / lambda
                }
            })
            .collect();
        let lost: f64 = (0..self.len())
            .filter(|&k| {
                let u = self.x(k) * lambda;
                u < a || u >= b
            })
            .map(|k| self.samples[k].norm())
            .sum::<f64>()
            * self.step();
        (self.with_samples(samples), lost)
    }

    pub fn write_binary(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&(self.q as i64).to_le_bytes())?;
        w.write_all(&self.x0.to_le_bytes())?;
        w.write_all(&(self.len() as i64).to_le_bytes())?;
        for z in &self.samples {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<GridSignal, SignalError> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let q = i64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let x0 = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let n = i64::from_le_bytes(b8);
        if n < 2 || n > (1 << 30) {
            return Err(SignalError::Malformed(format!("sample count {n}")));
        }
        let mut samples = Vec::with_capacity(n as usize);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            samples.push(C64::new(re, im));
        }
        GridSignal::new(q as i32, x0, samples)
    }

    /// Loads `x,re,im` rows; the grid is inferred from the first two rows.
    pub fn read_csv(r: impl Read) -> Result<GridSignal, SignalError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut xs = Vec::new();
        let mut vals = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SignalError::Malformed(e.to_string()))?;
            let get = |i: usize| -> Result<f64, SignalError> {
                rec.get(i)
                    .ok_or_else(|| SignalError::Malformed("missing column".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| SignalError::Malformed(e.to_string()))
            };
            xs.push(get(0)?);
            vals.push(C64::new(get(1)?, get(2)?));
        }
        if xs.len() < 2 {
            return Err(SignalError::BadLength(xs.len()));
        }
        let step = xs[1] - xs[0];
        let q = -step.log2().round() as i32;
        if (2f64.powi(-q) - step).abs() > 1e-12 * step {
            return Err(SignalError::Malformed(format!("step {step} is not a power of two")));
        }
        GridSignal::new(q, xs[0], vals)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), SignalError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "re", "im"]).map_err(|e| SignalError::Malformed(e.to_string()))?;
        for (k, z) in self.samples.iter().enumerate() {
            wtr.write_record([self.x(k).to_string(), z.re.to_string(), z.im.to_string()])
                .map_err(|e| SignalError::Malformed(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

impl Func for GridSignal {
    fn eval(&self, x: f64) -> C64 {
        let (a, b) = self.domain();
        if x < a || x >= b {
            return C64::new(0.0, 0.0);
        }
        self.eval_bandlimited(x)
    }

    fn hat(&self, xi: f64) -> C64 {
        self.fourier_at(xi)
    }

    fn support(&self) -> (f64, f64) {
        self.domain()
    }
}

/// Default grid: `N = 2^12`, `Δ = 2^{−6}`, domain `[−32, 32)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub q: i32,
    pub n: usize,
    pub x0: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            q: 6,
            n: 1 << 12,
            x0: -32.0,
        }
    }
}

impl GridSpec {
    /// Symmetric grid `[−NΔ/2, NΔ/2)`.
    pub fn centered(q: i32, n: usize) -> Self {
        GridSpec {
            q,
            n,
            x0: -(n as f64) * 2f64.powi(-q) / 2.0,
        }
    }

    pub fn step(&self) -> f64 {
        2f64.powi(-self.q)
    }

    pub fn length(&self) -> f64 {
        self.n as f64 * self.step()
    }

    pub fn sample(&self, f: &dyn Func) -> GridSignal {
        GridSignal::from_func(f, self.q, self.x0, self.n).expect("grid spec has power-of-two length")
    }

    pub fn sample_fn(&self, f: impl Fn(f64) -> C64) -> GridSignal {
        GridSignal::from_fn(self.q, self.x0, self.n, f).expect("grid spec has power-of-two length")
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.step()
    }
}

/// `e^{−1/x}` for `x > 0`, else 0.
fn edge(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Smooth transition equal to 0 for `x ≤ 0` and 1 for `x ≥ 1`.
pub fn smooth_step(x: f64) -> f64 {
    let a = edge(x);
    let b = edge(1.0 - x);
    if a + b == 0.0 {
        if x >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        a / (a + b)
    }
}

/// Smooth plateau: 1 on `[a, b]`, 0 outside `[a − w, b + w]`.
pub fn plateau(x: f64, a: f64, b: f64, w: f64) -> f64 {
    smooth_step((x - (a - w)) / w) * smooth_step(((b + w) - x) / w)
}

/// `amp · e^{2πiξ₀x} · e^{−π((x−c)/w)²}`
#[derive(Clone, Copy, Debug)]
pub struct Gaussian {
    pub amp: C64,
    pub center: f64,
    pub width: f64,
    pub freq: f64,
}

impl Gaussian {
    pub fn standard() -> Self {
        Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 0.0,
            width: 1.0,
            freq: 0.0,
        }
    }
}

impl Func for Gaussian {
    fn eval(&self, x: f64) -> C64 {
        let u = (x - self.center) / self.width;
        self.amp * cis(self.freq * x) * (-PI * u * u).exp()
    }

    fn hat(&self, xi: f64) -> C64 {
        let d = xi - self.freq;
        self.amp * self.width * (-PI * self.width * self.width * d * d).exp() * cis(-d * self.center)
    }

    fn support(&self) -> (f64, f64) {
        (self.center - 4.0 * self.width, self.center + 4.0 * self.width)
    }
}

/// Sum of functions.
pub struct SumFunc(pub Vec<Box<dyn Func>>);

impl Func for SumFunc {
    fn eval(&self, x: f64) -> C64 {
        self.0.iter().map(|f| f.eval(x)).sum()
    }

    fn hat(&self, xi: f64) -> C64 {
        self.0.iter().map(|f| f.hat(xi)).sum()
    }

    fn support(&self) -> (f64, f64) {
        self.0.iter().map(|f| f.support()).fold((f64::INFINITY, f64::NEG_INFINITY), |acc, s| {
            (acc.0.min(s.0), acc.1.max(s.1))
        })
    }
}

/// `1_{[a,b]}`, with value 1/2 at the endpoints.
#[derive(Clone, Copy, Debug)]
pub struct Indicator {
    pub a: f64,
    pub b: f64,
}

impl Func for Indicator {
    fn eval(&self, x: f64) -> C64 {
        let v = if x > self.a && x < self.b {
            1.0
        } else if x == self.a || x == self.b {
            0.5
        } else {
            0.0
        };
        C64::new(v, 0.0)
    }

    fn hat(&self, xi: f64) -> C64 {
        if xi.abs() < 1e-14 {
            return C64::new(self.b - self.a, 0.0);
        }
        (cis(-xi * self.a) - cis(-xi * self.b)) / C64::new(0.0, TWO_PI * xi)
    }

    fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }
}

type RealFn = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// Function given by a smooth compactly supported Fourier transform, optionally
/// translated by `shift`. Space values are computed by quadrature of the
/// inverse transform.
#[derive(Clone)]
pub struct FreqBump {
    hat: RealFn,
    lo: f64,
    hi: f64,
    shift: f64,
    nodes: usize,
    spatial: (f64, f64),
}

impl FreqBump {
    pub fn new(hat: impl Fn(f64) -> C64 + Send + Sync + 'static, lo: f64, hi: f64, spatial_halfwidth: f64) -> Self {
        FreqBump {
            hat: Arc::new(hat),
            lo,
            hi,
            shift: 0.0,
            nodes: 2048,
            spatial: (-spatial_halfwidth, spatial_halfwidth),
        }
    }

    pub fn translated(&self, tau: f64) -> FreqBump {
        let mut out = self.clone();
        out.shift += tau;
        out
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn freq_support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Untranslated transform.
    pub fn base_hat(&self, xi: f64) -> C64 {
        if xi <= self.lo || xi >= self.hi {
            C64::new(0.0, 0.0)
        } else {
            (self.hat)(xi)
        }
    }
}

impl Func for FreqBump {
    fn eval(&self, x: f64) -> C64 {
        let h = (self.hi - self.lo) / self.nodes as f64;
        let y = x - self.shift;
        let mut acc = C64::new(0.0, 0.0);
        for k in 1..self.nodes {
            let xi = self.lo + k as f64 * h;
            acc += self.base_hat(xi) * cis(xi * y);
        }
        acc * h
    }

    fn hat(&self, xi: f64) -> C64 {
        self.base_hat(xi) * cis(-xi * self.shift)
    }

    fn support(&self) -> (f64, f64) {
        (self.spatial.0 + self.shift, self.spatial.1 + self.shift)
    }
}

/// Function given by closures in space and frequency.
#[derive(Clone)]
pub struct ClosureFunc {
    f: RealFn,
    fhat: RealFn,
    support: (f64, f64),
}

impl ClosureFunc {
    pub fn new(
        f: impl Fn(f64) -> C64 + Send + Sync + 'static,
        fhat: impl Fn(f64) -> C64 + Send + Sync + 'static,
        support: (f64, f64),
    ) -> Self {
        ClosureFunc {
            f: Arc::new(f),
            fhat: Arc::new(fhat),
            support,
        }
    }
}

impl Func for ClosureFunc {
    fn eval(&self, x: f64) -> C64 {
        (self.f)(x)
    }

    fn hat(&self, xi: f64) -> C64 {
        (self.fhat)(xi)
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }
}

/// `e^{−1/(1−x²)}` on `(−1, 1)` and its first two derivatives.
fn base_bump(x: f64) -> (f64, f64, f64) {
    if x.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let w = 1.0 - x * x;
    let g = (-1.0 / w).exp();
    let h1 = -2.0 * x / (w * w);
    let h2 = -(2.0 + 6.0 * x * x) / (w * w * w);
    (g, g * h1, g * (h1 * h1 + h2))
}

/// Smooth even mean-zero `ζ` supported in `[−1, 1]` with
/// `∫₀^∞ |ζ̂(tξ)|² dt/t = 1` for `ξ ≠ 0`; a multiple of the second derivative
/// of `e^{−1/(1−x²)}`.
#[derive(Clone, Copy, Debug)]
pub struct Zeta {
    c: f64,
}

const ZETA_NODES: usize = 2048;

impl Zeta {
    pub fn new() -> Self {
        static NORM: OnceLock<f64> = OnceLock::new();
        let c = *NORM.get_or_init(|| {
            let raw = Zeta { c: 1.0 };
            let m = log_integral(|u| raw.hat(u).norm_sqr(), 1e-5, 64.0, 20000);
            1.0 / m.sqrt()
        });
        Zeta { c }
    }

    pub fn normalization(&self) -> f64 {
        self.c
    }
}

impl Default for Zeta {
    fn default() -> Self {
        Self::new()
    }
}

impl Func for Zeta {
    fn eval(&self, x: f64) -> C64 {
        C64::new(self.c * base_bump(x).2, 0.0)
    }

    fn hat(&self, xi: f64) -> C64 {
        // ζ̂(ξ) = −4π²ξ² c ĝ(ξ); ĝ by the trapezoid rule, exact to rounding for
        // a smooth function vanishing to all orders at ±1
        let h = 2.0 / ZETA_NODES as f64;
        let mut acc = 0.0;
        for k in 1..ZETA_NODES {
            let x = -1.0 + k as f64 * h;
            acc += base_bump(x).0 * (TWO_PI * xi * x).cos();
        }
        C64::new(-4.0 * PI * PI * xi * xi * self.c * acc * h, 0.0)
    }

    fn support(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

/// `∫_a^b f(u) du/u` by Simpson's rule in `log u`.
pub fn log_integral(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let (la, lb) = (a.ln(), b.ln());
    let h = (lb - la) / n as f64;
    let mut acc = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * f((la + k as f64 * h).exp());
    }
    acc * h / 3.0
}

/// Trapezoid quadrature of `B_t(φ, f₁, f₂)(x) = ∫ f₁(x−y) f₂(x+y) t^{−1} φ(y/t) dy`
/// with step `h` over `t · supp φ`.
pub fn bilinear_average(phi: &dyn Func, f1: &dyn Func, f2: &dyn Func, t: f64, x: f64, h: f64) -> Result<C64, SignalError> {
    assert!(t > 0.0 && h > 0.0);
    let (lo, hi) = phi.support();
    let samples = t * (hi - lo) / h;
    if samples < 8.0 {
        return Err(SignalError::Unresolved { t, samples });
    }
    let k0 = (t * lo / h).floor() as i64;
    let k1 = (t * hi / h).ceil() as i64;
    let mut acc = C64::new(0.0, 0.0);
    for k in k0..=k1 {
        let y = k as f64 * h;
        acc += f1.eval(x - y) * f2.eval(x + y) * phi.eval(y / t);
    }
    Ok(acc * h / t)
}

/// `B_t(φ, f₁, f₂)` at every grid point via the frequency form
/// `B̂(ζ) = ∫ f̂₁(ξ) f̂₂(ζ−ξ) φ̂(t(2ξ−ζ)) dξ`.
pub fn bilinear_average_spectral(phi: &dyn Func, f1: &GridSignal, f2: &GridSignal, t: f64) -> Result<GridSignal, SignalError> {
    if !f1.same_grid(f2) {
        return Err(SignalError::GridMismatch(f1.step(), f2.step()));
    }
    let n = f1.len();
    let s1 = f1.fourier();
    let s2 = f2.fourier();
    let dxi = s1.step();
    let xi0 = s1.origin();
    let max1 = s1.sup();
    let max2 = s2.sup();
    let active1: Vec<usize> = (0..n).filter(|&k| s1.samples[k].norm() > 1e-17 * max1.max(1e-300)).collect();
    let active2: Vec<usize> = (0..n).filter(|&k| s2.samples[k].norm() > 1e-17 * max2.max(1e-300)).collect();
    let mut out = vec![C64::new(0.0, 0.0); n];
    let half = (n / 2) as i64;
    for &k in &active1 {
        for &i in &active2 {
            // ξ_k + ξ_i = ζ_j with ζ_j = ξ0 + j dξ
            let j = k as i64 + i as i64 - half;
            if j < 0 || j >= n as i64 {
                continue;
            }
            let xi = xi0 + k as f64 * dxi;
            let zeta = xi0 + j as f64 * dxi;
            let m = phi.hat(t * (2.0 * xi - zeta));
            out[j as usize] += s1.samples[k] * s2.samples[i] * m;
        }
    }
    let spec = GridSignal::new(s1.q, xi0, out.into_iter().map(|z| z * dxi).collect())?;
    Ok(GridSignal::inverse_fourier(&spec, f1.origin()))
}

/// `B_t(φ, f₁, f₂)(x)` by the double Fourier integral at a single point.
pub fn bilinear_average_freq(phi: &dyn Func, f1: &GridSignal, f2: &GridSignal, t: f64, x: f64) -> C64 {
    let s1 = f1.fourier();
    let s2 = f2.fourier();
    let dxi = s1.step();
    let xi0 = s1.origin();
    let n = s1.len();
    let m1 = s1.sup();
    let m2 = s2.sup();
    let a1: Vec<usize> = (0..n).filter(|&k| s1.samples[k].norm() > 1e-16 * m1).collect();
    let a2: Vec<usize> = (0..n).filter(|&k| s2.samples[k].norm() > 1e-16 * m2).collect();
    let mut acc = C64::new(0.0, 0.0);
    for &k in &a1 {
        let xi = xi0 + k as f64 * dxi;
        let e1 = s1.samples[k] * cis(xi * x);
        for &i in &a2 {
            let eta = xi0 + i as f64 * dxi;
            acc += e1 * s2.samples[i] * phi.hat(t * (xi - eta)) * cis(eta * x);
        }
    }
    acc * dxi * dxi
}

/// `B_t(φ, f₁, f₂)` at every grid point by direct trapezoid quadrature in `y`
/// with the grid step; `f₁`, `f₂` vanish outside their window.
pub fn bilinear_average_grid(phi: &dyn Func, f1: &GridSignal, f2: &GridSignal, t: f64) -> Result<GridSignal, SignalError> {
    if !f1.same_grid(f2) {
        return Err(SignalError::GridMismatch(f1.step(), f2.step()));
    }
    let h = f1.step();
    let (lo, hi) = phi.support();
    let samples = t * (hi - lo) / h;
    if samples < 8.0 {
        return Err(SignalError::Unresolved { t, samples });
    }
    let k0 = (t * lo / h).floor() as i64;
    let k1 = (t * hi / h).ceil() as i64;
    let weights: Vec<(i64, C64)> = (k0..=k1)
        .map(|k| (k, phi.eval(k as f64 * h / t) * h / t))
        .filter(|(_, w)| w.norm() > 0.0)
        .collect();
    let n = f1.len() as i64;
    let a = f1.samples();
    let b = f2.samples();
    let out: Vec<C64> = (0..n)
        .map(|j| {
            let mut acc = C64::new(0.0, 0.0);
            for &(k, w) in &weights {
                let i1 = j - k;
                let i2 = j + k;
                if i1 >= 0 && i1 < n && i2 >= 0 && i2 < n {
                    acc += a[i1 as usize] * b[i2 as usize] * w;
                }
            }
            acc
        })
        .collect();
    Ok(f1.with_samples(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BumpClass {
    S0,
    S0Tau,
    S0Plus,
    Theta0,
    Theta0Tau,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpClassSpec {
    pub class: BumpClass,
    pub shift: f64,
    pub max_deriv: u32,
    pub max_decay: u32,
    /// Membership in `C · class`.
    pub constant: f64,
}

impl BumpClassSpec {
    pub fn new(class: BumpClass, shift: f64, max_deriv: u32, max_decay: u32) -> Self {
        let shift = match class {
            BumpClass::S0 | BumpClass::S0Plus | BumpClass::Theta0 => 0.0,
            _ => shift,
        };
        BumpClassSpec {
            class,
            shift,
            max_deriv: max_deriv.min(4),
            max_decay,
            constant: 1.0,
        }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub pass: bool,
    pub worst_ratio: f64,
    /// `(derivative order, decay order, x)` where the worst ratio occurs.
    pub witness: (u32, u32, f64),
    pub mean: f64,
    pub mean_ok: bool,
    /// Relative spectral mass outside `[8, 9]` for Θ classes.
    pub freq_leak: Option<f64>,
}

/// Centered finite-difference derivatives of orders `0..=max`.
pub fn fd_derivatives(f: &GridSignal, max: u32) -> Vec<Vec<C64>> {
    let h = f.step();
    let n = f.len();
    let at = |v: &Vec<C64>, k: i64| -> C64 {
        if k < 0 || k >= n as i64 {
            C64::new(0.0, 0.0)
        } else {
            v[k as usize]
        }
    };
    let mut out = vec![f.samples().to_vec()];
    for order in 1..=max {
        let prev = if order % 2 == 0 { &out[(order - 2) as usize] } else { &out[(order - 1) as usize] };
        let next: Vec<C64> = (0..n as i64)
            .map(|k| {
                if order % 2 == 0 {
                    (at(prev, k + 1) - at(prev, k) * 2.0 + at(prev, k - 1)) / (h * h)
                } else {
                    (at(prev, k + 1) - at(prev, k - 1)) / (2.0 * h)
                }
            })
            .collect();
        out.push(next);
    }
    out
}

/// Seminorm, mean-zero and frequency-support checks for the bump classes.
pub fn class_check(f: &GridSignal, spec: &BumpClassSpec) -> ClassReport {
    let h = f.step();
    // distance to the shift in grid units, exact when x0 and shift are grid multiples
    let base = (f.origin() - spec.shift) / h;
    let mean = f.integral().norm();
    let scale = f.l1().max(1e-300);
    let mean_ok = mean <= 1e-8 * scale;
    let mut worst = 0.0f64;
    let mut witness = (0, 0, f.origin());
    let theta = matches!(spec.class, BumpClass::Theta0 | BumpClass::Theta0Tau);
    if theta {
        for k in 0..f.len() {
            let d = ((base + k as f64) * h).abs();
            let r = f.samples()[k].norm() * (1.0 + d).powi(spec.max_decay as i32) / spec.constant;
            if r > worst {
                worst = r;
                witness = (0, spec.max_decay, f.x(k));
            }
        }
    } else {
        let ders = fd_derivatives(f, spec.max_deriv);
        for (n, der) in ders.iter().enumerate() {
            for m in 0..=spec.max_decay {
                for (k, z) in der.iter().enumerate() {
                    let d = ((base + k as f64) * h).abs();
                    let r = d.powi(m as i32) * z.norm() / spec.constant;
                    if r > worst {
                        worst = r;
                        witness = (n as u32, m, f.x(k));
                    }
                }
            }
        }
    }
    let freq_leak = if theta {
        let s = f.fourier();
        let (mut inside, mut outside) = (0.0, 0.0);
        for k in 0..s.len() {
            let xi = s.x(k);
            let e = s.samples()[k].norm_sqr();
            if (8.0..=9.0).contains(&xi) {
                inside += e;
            } else {
                outside += e;
            }
        }
        Some((outside / (inside + outside).max(1e-300)).sqrt())
    } else {
        None
    };
    let freq_ok = freq_leak.map_or(true, |l| l <= 1e-8);
    ClassReport {
        pass: worst <= 1.0 + 1e-12 && mean_ok && freq_ok,
        worst_ratio: worst,
        witness,
        mean,
        mean_ok,
        freq_leak,
    }
}

/// Modulus of continuity sampled on `(0, 1]`, interpolated linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulusOfContinuity {
    pub t: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ModulusOfContinuity {
    /// Log-spaced samples of `f` on `[t_min, 1]`.
    pub fn from_fn(f: impl Fn(f64) -> f64, t_min: f64, n: usize) -> Self {
        let lmin = t_min.ln();
        let t: Vec<f64> = (0..n)
            .map(|i| (lmin * (1.0 - i as f64 / (n - 1) as f64)).exp())
            .collect();
        let eta = t.iter().map(|&x| f(x)).collect();
        ModulusOfContinuity { t, eta }
    }

    /// `η(t) = c t^α`
    pub fn power(c: f64, alpha: f64) -> Self {
        Self::from_fn(move |t| c * t.powf(alpha), 1e-12, 2001)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let n = self.t.len();
        if x <= self.t[0] {
            return self.eta[0] * x / self.t[0];
        }
        if x >= self.t[n - 1] {
            return self.eta[n - 1];
        }
        let i = self.t.partition_point(|&s| s <= x);
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let w = (x - t0) / (t1 - t0);
        self.eta[i - 1] * (1.0 - w) + self.eta[i] * w
    }

    pub fn at_one(&self) -> f64 {
        self.eval(1.0)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.eta.windows(2).all(|w| w[1] >= w[0])
    }

    /// Worst `η(x+y) − η(x) − η(y)` over sampled pairs with `x + y ≤ 1`.
    pub fn subadditivity_defect(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        let stride = (self.t.len() / 200).max(1);
        for i in (0..self.t.len()).step_by(stride) {
            for j in (i..self.t.len()).step_by(stride) {
                let s = self.t[i] + self.t[j];
                if s > 1.0 {
                    break;
                }
                worst = worst.max(self.eval(s) - self.eta[i] - self.eta[j]);
            }
        }
        worst
    }

    pub fn vanishes_at_zero(&self) -> bool {
        self.eta[0] <= 1e-2 * self.at_one()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtaReport {
    pub odd_defect: f64,
    pub hat_ratio: f64,
    pub decay_ratio: f64,
    pub smooth_ratio: f64,
    pub eta_monotone: bool,
    pub eta_subadditive: bool,
    pub eta_vanishes: bool,
    pub pass: bool,
}

/// Checks the three kernel bounds over sampled pairs `2|x−x′| < |x|` and the
/// properties of `η`. Ratios above 1 indicate a violated bound.
pub fn eta_kernel_check(k: &GridSignal, eta: &ModulusOfContinuity) -> EtaReport {
    let n = k.len();
    let h = k.step();
    let e1 = eta.at_one();
    let s = k.samples();
    let scale = k.sup().max(1e-300);
    // mirror index for a grid symmetric about 0: x_{N−i} = −x_i
    let mut odd = 0.0f64;
    for i in 1..n {
        let j = n - i;
        if (k.x(i) + k.x(j)).abs() < 1e-9 {
            odd = odd.max((s[i] + s[j]).norm() / scale);
        }
    }
    let spec = k.fourier();
    let hat_ratio = spec.sup() / e1;
    let mut decay = 0.0f64;
    let mut smooth = 0.0f64;
    for i in 0..n {
        let x = k.x(i);
        if x.abs() < 4.0 * h {
            continue;
        }
        decay = decay.max(x.abs() * s[i].norm() / e1);
        let mut d = 1usize;
        while (d as f64) * h * 2.0 < x.abs() {
            for jj in [i as i64 - d as i64, i as i64 + d as i64] {
                if jj < 0 || jj >= n as i64 {
                    continue;
                }
                let xp = k.x(jj as usize);
                let bound = eta.eval((x - xp).abs() / x.abs()) / x.abs();
                if bound > 0.0 {
                    smooth = smooth.max((s[i] - s[jj as usize]).norm() / bound);
                }
            }
            d *= 2;
        }
    }
    let eta_monotone = eta.is_nondecreasing();
    let eta_subadditive = eta.subadditivity_defect() <= 1e-12 * e1.max(1.0);
    let eta_vanishes = eta.vanishes_at_zero();
    let tol = 1.0 + 1e-9;
    EtaReport {
        odd_defect: odd,
        hat_ratio,
        decay_ratio: decay,
        smooth_ratio: smooth,
        eta_monotone,
        eta_subadditive,
        eta_vanishes,
        pass: odd <= 1e-9 && hat_ratio <= tol && decay <= tol && smooth <= tol && eta_monotone && eta_subadditive && eta_vanishes,
    }
}

/// Pointwise `M^p_τ f(x) = sup_s ((1/π) ∫ |f(x − 2^s(y − τ_s))|^p (1+y²)^{−1} dy)^{1/p}`,
/// computed with the substitution `y = tan θ` so that constants have mass exactly 1.
pub fn shifted_maximal(
    f: &dyn Func,
    tau: &dyn Fn(i64) -> f64,
    p: f64,
    x: f64,
    scales: std::ops::RangeInclusive<i64>,
    nodes: usize,
) -> f64 {
    let mut best = 0.0f64;
    for s in scales {
        let ts = 2f64.powi(s as i32);
        let ta = tau(s);
        let mut acc = 0.0;
        for k in 0..nodes {
            let th = -PI / 2.0 + PI * (k as f64 + 0.5) / nodes as f64;
            let y = th.tan();
            acc += f.eval(x - ts * (y - ta)).norm().powf(p);
        }
        best = best.max(acc / nodes as f64);
    }
    best.powf(1.0 / p)
}

/// Grid version of [`shifted_maximal`]: `|f|^p` is convolved with the shifted
/// Poisson kernel at each scale (zero-padded FFT, no wrap-around). Scales with
/// fewer than 8 samples per unit width are rejected.
pub fn shifted_maximal_grid(
    absf_p: &[f64],
    q: i32,
    tau: &dyn Fn(i64) -> f64,
    p: f64,
    scales: std::ops::RangeInclusive<i64>,
) -> Result<Vec<f64>, SignalError> {
    let n = absf_p.len();
    let h = 2f64.powi(-q);
    let big = 4 * n;
    let mut fbuf: Vec<C64> = (0..big).map(|k| C64::new(if k < n { absf_p[k] } else { 0.0 }, 0.0)).collect();
    fft_inplace(&mut fbuf, false);
    let mut best = vec![0.0f64; n];
    for s in scales {
        let ts = 2f64.powi(s as i32);
        if ts / h < 8.0 {
            return Err(SignalError::Unresolved { t: ts, samples: ts / h });
        }
        let ta = tau(s);
        // kernel K(z) = (1/π) 2^{−s} / (1 + (z/2^s + τ)^2) at z = jh, j ∈ (−2n, 2n)
        let mut kbuf: Vec<C64> = (0..big)
            .map(|idx| {
                let j = if idx < big / 2 { idx as i64 } else { idx as i64 - big as i64 };
                let z = j as f64 * h;
                let u = z / ts + ta;
                C64::new(h / (PI * ts * (1.0 + u * u)), 0.0)
            })
            .collect();
        fft_inplace(&mut kbuf, false);
        for (a, b) in kbuf.iter_mut().zip(&fbuf) {
            *a *= b;
        }
        fft_inplace(&mut kbuf, true);
        for k in 0..n {
            let v = (kbuf[k].re / big as f64).max(0.0);
            if v > best[k] {
                best[k] = v;
            }
        }
    }
    Ok(best.into_iter().map(|v| v.powf(1.0 / p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gauss_grid(q: i32, n: usize) -> GridSignal {
        let g = GridSpec::centered(q, n);
        g.sample(&Gaussian::standard())
    }

    #[test]
    fn gaussian_is_self_dual() {
        let f = gauss_grid(7, 1 << 12);
        let s = f.fourier();
        let err = (0..s.len())
            .map(|k| (s.samples()[k] - C64::new((-PI * s.x(k) * s.x(k)).exp(), 0.0)).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "err {err}");
    }

    #[test]
    fn spike_has_flat_spectrum() {
        let g = GridSpec::default();
        let mut v = vec![C64::new(0.0, 0.0); g.n];
        v[g.n / 2 + 3] = C64::new(1.0, 0.0);
        let f = GridSignal::new(g.q, g.x0, v).unwrap();
        let s = f.fourier();
        let m: Vec<f64> = s.samples().iter().map(|z| z.norm()).collect();
        for x in &m {
            assert_abs_diff_eq!(*x, g.step(), epsilon = 1e-15);
        }
    }

    #[test]
    fn fourier_round_trip() {
        let g = GridSpec::default();
        let f = g.sample(&Gaussian {
            amp: C64::new(0.3, -1.2),
            center: 1.5,
            width: 2.0,
            freq: 3.25,
        });
        let back = GridSignal::inverse_fourier(&f.fourier(), f.origin());
        let err = back.sub(&f).l2() / f.l2();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn fourier_matches_analytic_transform() {
        let g = GridSpec::default();
        let gs = Gaussian {
            amp: C64::new(1.0, 0.5),
            center: -2.0,
            width: 1.5,
            freq: -1.0,
        };
        let f = g.sample(&gs);
        let s = f.fourier();
        for k in (0..s.len()).step_by(97) {
            assert!((s.samples()[k] - gs.hat(s.x(k))).norm() < 1e-12);
        }
        assert!((f.fourier_at(0.123) - gs.hat(0.123)).norm() < 1e-12);
    }

    #[test]
    fn parseval_inner_product() {
        let g = GridSpec::default();
        let f = g.sample(&Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 1.0,
            width: 1.0,
            freq: 0.5,
        });
        let h = g.sample(&Gaussian {
            amp: C64::new(0.0, 1.0),
            center: -0.5,
            width: 2.0,
            freq: 0.0,
        });
        let t = f.inner(&h);
        let fr = f.fourier().inner(&h.fourier());
        assert!((t - fr).norm() <= 1e-10 * t.norm());
    }

    #[test]
    fn bilinear_constant_inputs() {
        let one = ClosureFunc::new(|_| C64::new(1.0, 0.0), |_| C64::new(0.0, 0.0), (-1e9, 1e9));
        let phi = Gaussian::standard();
        let v = bilinear_average(&phi, &one, &one, 1.0, 0.3, 1.0 / 256.0).unwrap();
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn bilinear_indicator_half() {
        let ind = Indicator { a: 0.0, b: 1.0 };
        let v = bilinear_average(&ind, &ind, &ind, 1.0, 0.5, 1.0 / 4096.0).unwrap();
        assert!((v.re - 0.5).abs() < 1e-3, "{v}");
        // oracle: the integrand is 1 exactly on y ∈ [0, 1/2]
        let v2 = bilinear_average(&ind, &ind, &ind, 1.0, 0.5, 1.0 / (1 << 16) as f64).unwrap();
        assert!((v2.re - 0.5).abs() < (v.re - 0.5).abs() + 1e-12);
    }

    #[test]
    fn bilinear_plane_wave_identity() {
        let xi = 1.0;
        let wave = ClosureFunc::new(move |x| cis(xi * x), |_| C64::new(0.0, 0.0), (-1e9, 1e9));
        let one = ClosureFunc::new(|_| C64::new(1.0, 0.0), |_| C64::new(0.0, 0.0), (-1e9, 1e9));
        let phi = Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 0.0,
            width: 1.0,
            freq: 0.0,
        };
        let x = 0.37;
        let v = bilinear_average(&phi, &wave, &one, 1.0, x, 1.0 / 512.0).unwrap();
        let expect = cis(xi * x) * phi.hat(xi);
        assert!((v - expect).norm() < 1e-12);
    }

    #[test]
    fn bilinear_resolution_error() {
        let phi = Gaussian::standard();
        let r = bilinear_average(&phi, &phi, &phi, 1e-3, 0.0, 1.0 / 64.0);
        assert!(matches!(r, Err(SignalError::Unresolved { .. })));
    }

    #[test]
    fn quadrature_and_frequency_forms_agree() {
        let g = GridSpec::default();
        let f1 = g.sample(&Gaussian {
            amp: C64::new(1.0, 0.0),
            center: -1.0,
            width: 1.0,
            freq: 1.5,
        });
        let f2 = g.sample(&Gaussian {
            amp: C64::new(0.5, 0.5),
            center: 1.0,
            width: 1.5,
            freq: -0.5,
        });
        let phi = Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 0.5,
            width: 0.75,
            freq: 0.0,
        };
        for &t in &[0.5, 1.0, 2.0] {
            let grid = bilinear_average_grid(&phi, &f1, &f2, t).unwrap();
            let spec = bilinear_average_spectral(&phi, &f1, &f2, t).unwrap();
            let err = grid.sub(&spec).l2() / grid.l2();
            assert!(err < 1e-6, "t={t} err={err}");
            let k = g.n / 2 + 17;
            let x = grid.x(k);
            let pt = bilinear_average_freq(&phi, &f1, &f2, t, x);
            assert!((pt - grid.samples()[k]).norm() < 1e-6 * grid.sup());
        }
    }

    #[test]
    fn scaling_covariance() {
        let f1 = Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 0.2,
            width: 1.0,
            freq: 0.7,
        };
        let f2 = Gaussian {
            amp: C64::new(1.0, 0.0),
            center: -0.1,
            width: 1.3,
            freq: 0.0,
        };
        let phi = Gaussian::standard();
        let t = 2.0;
        let x = 0.8;
        let lhs = bilinear_average(&phi, &f1, &f2, t, x, 1.0 / 1024.0).unwrap();
        let g1 = ClosureFunc::new(move |u| f1.eval(t * u), |_| C64::new(0.0, 0.0), (-8.0, 8.0));
        let g2 = ClosureFunc::new(move |u| f2.eval(t * u), |_| C64::new(0.0, 0.0), (-8.0, 8.0));
        let rhs = bilinear_average(&phi, &g1, &g2, 1.0, x / t, 1.0 / 2048.0).unwrap();
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn dilation_and_translation() {
        let g = GridSpec::default();
        let f = g.sample(&Gaussian::standard());
        let (d1, _) = f.dilate(1.0);
        assert_eq!(d1, f);
        let (d2, lost) = f.dilate(2.0);
        assert!((d2.integral() - f.integral()).norm() < 1e-10);
        assert!(lost < 1e-12);
        let back = f.translate(0.3).translate(-0.3);
        assert!(back.sub(&f).l2() < 1e-10);
        let rolled = f.translate(1.0);
        assert!((rolled.samples()[g.n / 2 + 64] - f.samples()[g.n / 2]).norm() == 0.0);
        let m = f.modulate(2.0);
        assert!((m.fourier_at(2.0) - f.fourier_at(0.0)).norm() < 1e-12);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let g = GridSpec::centered(3, 16);
        let f = g.sample(&Gaussian::standard());
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 16);
        let back = GridSignal::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, f);
        let mut csvb = Vec::new();
        f.write_csv(&mut csvb).unwrap();
        let back = GridSignal::read_csv(csvb.as_slice()).unwrap();
        assert_eq!(back.q(), 3);
        assert!(back.sub(&f).sup() < 1e-15);
    }

    fn dgauss_unit() -> GridSignal {
        let g = GridSpec::default();
        let raw = g.sample_fn(|x| C64::new(-2.0 * PI * x * (-PI * x * x).exp(), 0.0));
        let spec = BumpClassSpec::new(BumpClass::S0, 0.0, 2, 3);
        let r = class_check(&raw, &spec);
        raw.scale(C64::new(1.0 / r.worst_ratio, 0.0))
    }

    #[test]
    fn class_check_gaussian_derivative() {
        let f = dgauss_unit();
        let spec = BumpClassSpec::new(BumpClass::S0, 0.0, 2, 3);
        let r = class_check(&f, &spec);
        assert!(r.pass, "{r:?}");
        let shifted = f.translate(5.0);
        let r2 = class_check(&shifted, &BumpClassSpec::new(BumpClass::S0Tau, 5.0, 2, 3));
        assert!(r2.pass);
        assert_eq!(r2.worst_ratio, r.worst_ratio);
    }

    #[test]
    fn class_check_rejects_indicator() {
        let g = GridSpec::default();
        let ind = g.sample(&Indicator { a: 0.0, b: 1.0 });
        let spec = BumpClassSpec::new(BumpClass::S0, 0.0, 2, 2);
        let r = class_check(&ind, &spec);
        assert!(!r.pass);
        let fine = GridSpec::centered(8, 1 << 14).sample(&Indicator { a: 0.0, b: 1.0 });
        assert!(class_check(&fine, &spec).worst_ratio > r.worst_ratio);
    }

    #[test]
    fn eta_kernel_examples() {
        let g = GridSpec::default();
        let k = g.sample_fn(|x| C64::new(x / (1.0 + x * x), 0.0));
        let eta = ModulusOfContinuity::power(4.0, 1.0);
        let r = eta_kernel_check(&k, &eta);
        assert!(r.pass, "{r:?}");
        let even = g.sample_fn(|x| C64::new(1.0 / (1.0 + x * x), 0.0));
        assert!(eta_kernel_check(&even, &eta).odd_defect > 0.1);
        let mut bad = eta.clone();
        bad.eta[10] = bad.eta[11] * 2.0;
        assert!(!bad.is_nondecreasing());
        assert!(!eta_kernel_check(&k, &bad).pass);
    }

    #[test]
    fn maximal_of_constant_is_one() {
        let one = ClosureFunc::new(|_| C64::new(1.0, 0.0), |_| C64::new(0.0, 0.0), (-1e9, 1e9));
        let v = shifted_maximal(&one, &|_| 3.0, 1.0, 0.0, -2..=3, 512);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maximal_at_lebesgue_point() {
        let ind = Indicator { a: 0.0, b: 1.0 };
        let coarse = shifted_maximal(&ind, &|_| 0.0, 1.0, 0.5, -2..=2, 20000);
        let fine = shifted_maximal(&ind, &|_| 0.0, 1.0, 0.5, -10..=2, 20000);
        assert!(fine > coarse);
        assert!(fine > 0.99);
    }

    #[test]
    fn maximal_grid_matches_pointwise() {
        let g = GridSpec::default();
        let gs = Gaussian::standard();
        let f = g.sample(&gs);
        let abs: Vec<f64> = f.samples().iter().map(|z| z.norm()).collect();
        let m = shifted_maximal_grid(&abs, g.q, &|_| 2.0, 1.0, -1..=2).unwrap();
        let k = g.n / 2 + 40;
        let pt = shifted_maximal(&gs, &|_| 2.0, 1.0, g.x(k), -1..=2, 200000);
        assert!((m[k] - pt).abs() < 1e-3 * pt, "{} {}", m[k], pt);
        assert!(shifted_maximal_grid(&abs, g.q, &|_| 0.0, 1.0, -5..=0).is_err());
    }
    #[test]
    fn zeta_normalization_and_mean() {
        let z = Zeta::new();
        assert!(z.hat(0.0).norm() < 1e-15);
        assert!((z.eval(0.3) - z.eval(-0.3)).norm() == 0.0);
        for &xi in &[0.25, 1.0, 3.0] {
            let m = log_integral(|t| z.hat(t * xi).norm_sqr(), 1e-5 / xi, 64.0 / xi, 20000);
            assert!((m - 1.0).abs() < 1e-8, "{m}");
        }
        let g = GridSpec::centered(10, 1 << 12).sample(&z);
        assert!(g.integral().norm() < 1e-12);
        assert!((g.fourier_at(0.8) - z.hat(0.8)).norm() < 1e-10);
    }
}
