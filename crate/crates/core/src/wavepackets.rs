//! The frequency window ρ, lattice wave packets, the tri-tile discretization of
//! `B_{2^s}(ψ, f₁, f₂)` and the dualized model form.
//!
//! Everything lives in the periodic model of a centered sampling grid of length
//! `L = NΔ`: frequencies are multiples of `1/L`, and at scale `s` packet
//! positions `v` run over the `P = L/2^s` residues. In that model the packet
//! frame is exactly tight.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::dyadic::{Tile, TriTile};
use crate::signal::{cis, fft_inplace, Func, GridSignal, GridSpec, SignalError, C64};

#[derive(Debug, Error)]
pub enum WaveError {
    #[error("partition of unity residual {0:e} exceeds 1e-10")]
    Partition(f64),
    #[error("grid length {0} is not a multiple of 2^{1}")]
    Period(f64, i32),
    #[error("grid must be centered at 0 (x0 = {0})")]
    NotCentered(f64),
    #[error("ψ is not frequency supported in [8, 9]: leak {0:e}")]
    NotTheta(f64),
    #[error("expansion scale {0} does not match {1}")]
    ScaleMismatch(i32, i32),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed expansion file: {0}")]
    Malformed(String),
}

/// Profile of the generating bump `b(x) = exp(k − k/(1−u²))`, `u = (x − 1/2)/h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowParams {
    pub sharpness: f64,
    pub half_width: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            sharpness: 2.0,
            half_width: 0.4,
        }
    }
}

fn bump(x: f64, c: f64, h: f64, k: f64) -> f64 {
    let u = (x - c) / h;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (k - k / (1.0 - u * u)).exp()
    }
}

#[derive(Clone, Debug)]
pub struct WindowRho {
    params: WindowParams,
    rho_hat: GridSignal,
    rho: GridSignal,
}

impl WindowRho {
    pub fn params(&self) -> WindowParams {
        self.params
    }

    fn base(&self, x: f64) -> f64 {
        bump(x, 0.5, self.params.half_width, self.params.sharpness)
    }

    /// `ρ̂(ξ) = b(ξ) / (Σ_ℓ b(ξ − ℓ/3)²)^{1/2}`
    pub fn hat(&self, xi: f64) -> f64 {
        let b = self.base(xi);
        if b == 0.0 {
            return 0.0;
        }
        let lo = (3.0 * (xi - 1.0)).floor() as i64;
        let hi = (3.0 * xi).ceil() as i64;
        let norm: f64 = (lo..=hi).map(|l| self.base(xi - l as f64 / 3.0).powi(2)).sum();
        b / norm.sqrt()
    }

    /// Frequency-side samples on `[0, 1)`.
    pub fn rho_hat(&self) -> &GridSignal {
        &self.rho_hat
    }

    /// Space-side samples on the default grid.
    pub fn rho(&self) -> &GridSignal {
        &self.rho
    }

    /// `max |Σ_ℓ ρ̂(ξ − ℓ/3)² − 1|` over `samples` points of `[0, 1)`.
    pub fn partition_residual(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|i| {
                let xi = i as f64 / samples as f64;
                let s: f64 = (-6..=6).map(|l| self.hat(xi - l as f64 / 3.0).powi(2)).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `(R, sup_{|x| ≥ R} |ρ(x)| / sup |ρ|)` for `R = 1, 2, 4, …`.
    pub fn decay_profile(&self) -> Vec<(f64, f64)> {
        let top = self.rho.sup();
        let (_, end) = self.rho.domain();
        let mut out = Vec::new();
        let mut r = 1.0;
        while r < end {
            let m = (0..self.rho.len())
                .filter(|&k| self.rho.x(k).abs() >= r)
                .map(|k| self.rho.samples()[k].norm())
                .fold(0.0, f64::max);
            out.push((r, m / top));
            r *= 2.0;
        }
        out
    }

    pub fn write_params(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "sharpness = {}", self.params.sharpness)?;
        writeln!(w, "half_width = {}", self.params.half_width)
    }

    pub fn read_params(r: impl BufRead) -> Result<WindowRho, WaveError> {
        let mut p = WindowParams::default();
        for line in r.lines() {
            let line = line?;
            let Some((k, v)) = line.split_once('=') else { continue };
            let v: f64 = v.trim().parse().map_err(|_| WaveError::Malformed(line.clone()))?;
            match k.trim() {
                "sharpness" => p.sharpness = v,
                "half_width" => p.half_width = v,
                _ => return Err(WaveError::Malformed(line.clone())),
            }
        }
        build_window_with(p)
    }
}

pub fn build_window() -> Result<WindowRho, WaveError> {
    build_window_with(WindowParams::default())
}

pub fn build_window_with(params: WindowParams) -> Result<WindowRho, WaveError> {
    assert!(params.half_width <= 0.4 && params.half_width > 1.0 / 6.0);
    let mut w = WindowRho {
        params,
        rho_hat: GridSignal::new(10, 0.0, vec![C64::new(0.0, 0.0); 2])?,
        rho: GridSignal::new(10, 0.0, vec![C64::new(0.0, 0.0); 2])?,
    };
    let res = w.partition_residual(4096);
    if res > 1e-10 {
        return Err(WaveError::Partition(res));
    }
    w.rho_hat = GridSignal::from_fn(10, 0.0, 1 << 10, |xi| C64::new(w.hat(xi), 0.0))?;
    let g = GridSpec::default();
    let probe = g.sample_fn(|_| C64::new(0.0, 0.0));
    let mut fs = probe.fourier();
    let vals: Vec<C64> = (0..fs.len()).map(|k| C64::new(w.hat(fs.x(k)), 0.0)).collect();
    fs = fs.with_samples(vals);
    w.rho = GridSignal::inverse_fourier(&fs, g.x0);
    Ok(w)
}

/// Period `P = L/2^s` of the position lattice at scale `s`.
pub fn position_period(grid: &GridSpec, s: i32) -> Result<usize, WaveError> {
    let l = grid.length();
    let p = l / 2f64.powi(s);
    if p < 1.0 || p.fract() != 0.0 {
        return Err(WaveError::Period(l, s));
    }
    Ok(p as usize)
}

fn check_centered(grid: &GridSpec) -> Result<(), WaveError> {
    if grid.x0 != -grid.length() / 2.0 {
        return Err(WaveError::NotCentered(grid.x0));
    }
    Ok(())
}

/// Frequency index range `k` (in units of `1/P`) where `ρ̂(k/P − ℓ/3) ≠ 0`.
fn support_range(window: &WindowRho, period: usize, l: i64) -> std::ops::RangeInclusive<i64> {
    let p = period as f64;
    let h = window.params.half_width;
    let lo = ((l as f64 / 3.0 + 0.5 - h) * p).floor() as i64;
    let hi = ((l as f64 / 3.0 + 0.5 + h) * p).ceil() as i64;
    lo..=hi
}

/// Coefficients `⟨f, ψ^{(s)}_{v,ℓ}⟩` with `ψ^{(s)}_{v,ℓ}(x) = 2^{−s/2} ψ_{v,ℓ}(2^{−s}x)`,
/// indexed by `ℓ` and `v mod P`.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketCoefficients {
    pub s: i32,
    pub period: usize,
    pub grid: GridSpec,
    l_lo: i64,
    rows: Vec<Vec<C64>>,
}

impl PacketCoefficients {
    pub fn l_range(&self) -> std::ops::RangeInclusive<i64> {
        self.l_lo..=self.l_lo + self.rows.len() as i64 - 1
    }

    pub fn row(&self, l: i64) -> Option<&[C64]> {
        let i = l - self.l_lo;
        if i < 0 || i >= self.rows.len() as i64 {
            None
        } else {
            Some(&self.rows[i as usize])
        }
    }

    pub fn get(&self, v: i64, l: i64) -> C64 {
        match self.row(l) {
            Some(r) => r[v.rem_euclid(self.period as i64) as usize],
            None => C64::new(0.0, 0.0),
        }
    }

    /// `Σ |⟨f, ψ_{v,ℓ}⟩|²`, equal to `‖f‖²` for a tight frame.
    pub fn energy(&self) -> f64 {
        self.rows.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    fn row_norm(&self, l: i64) -> f64 {
        self.row(l).map_or(0.0, |r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
    }
}

/// Expansion coefficients of `f` at scale `s`.
pub fn wave_packet_expand(f: &GridSignal, window: &WindowRho, s: i32) -> Result<PacketCoefficients, WaveError> {
    let grid = GridSpec {
        q: f.q(),
        n: f.len(),
        x0: f.origin(),
    };
    check_centered(&grid)?;
    let period = position_period(&grid, s)?;
    let spec = f.fourier();
    let n = f.len() as i64;
    let half = n / 2;
    // grid frequency index k (ξ = k/L) covers [−N/2, N/2); at scale s that is k/P in η
    let eta_min = -half as f64 / period as f64;
    let eta_max = (half - 1) as f64 / period as f64;
    let l_lo = (3.0 * (eta_min - 1.0)).floor() as i64;
    let l_hi = (3.0 * eta_max).ceil() as i64;
    let scale = 2f64.powf(s as f64 / 2.0) / grid.length();
    let rows: Vec<Vec<C64>> = (l_lo..=l_hi)
        .into_par_iter()
        .map(|l| {
            let mut g = vec![C64::new(0.0, 0.0); period];
            for k in support_range(window, period, l) {
                if k < -half || k >= half {
                    continue;
                }
                let w = window.hat(k as f64 / period as f64 - l as f64 / 3.0);
                if w != 0.0 {
                    g[k.rem_euclid(period as i64) as usize] += spec.samples()[(k + half) as usize] * w;
                }
            }
            fft_inplace(&mut g, true);
            g.iter().map(|z| z * scale).collect()
        })
        .collect();
    Ok(PacketCoefficients {
        s,
        period,
        grid,
        l_lo,
        rows,
    })
}

/// Spectrum `Σ_{ℓ,v} ψ̂_{v,ℓ} c_{v,ℓ}` on the grid's frequency lattice.
pub fn synthesize_spectrum(coefs: &PacketCoefficients, window: &WindowRho) -> GridSignal {
    let grid = coefs.grid;
    let n = grid.n as i64;
    let half = n / 2;
    let period = coefs.period;
    let scale = 2f64.powf(coefs.s as f64 / 2.0);
    let mut out = vec![C64::new(0.0, 0.0); grid.n];
    for l in coefs.l_range() {
        let row = coefs.row(l).unwrap();
        if row.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            continue;
        }
        let mut h = row.to_vec();
        fft_inplace(&mut h, false);
        for k in support_range(window, period, l) {
            if k < -half || k >= half {
                continue;
            }
            let w = window.hat(k as f64 / period as f64 - l as f64 / 3.0);
            out[(k + half) as usize] += h[k.rem_euclid(period as i64) as usize] * (w * scale);
        }
    }
    let probe = grid.sample_fn(|_| C64::new(0.0, 0.0)).fourier();
    probe.with_samples(out)
}

pub fn synthesize(coefs: &PacketCoefficients, window: &WindowRho) -> GridSignal {
    GridSignal::inverse_fourier(&synthesize_spectrum(coefs, window), coefs.grid.x0)
}

/// The periodized packet `ψ^{(s)}_{v,ℓ}` sampled on `grid`.
pub fn wave_packet(window: &WindowRho, grid: &GridSpec, s: i32, v: i64, l: i64) -> Result<GridSignal, WaveError> {
    check_centered(grid)?;
    let period = position_period(grid, s)? as f64;
    let spec = grid.sample_fn(|_| C64::new(0.0, 0.0)).fourier();
    let half = (grid.n / 2) as i64;
    let scale = 2f64.powf(s as f64 / 2.0);
    let vals = (0..grid.n)
        .map(|m| {
            let k = m as i64 - half;
            let eta = k as f64 / period;
            cis(-(v as f64) * eta) * (scale * window.hat(eta - l as f64 / 3.0))
        })
        .collect();
    Ok(GridSignal::inverse_fourier(&spec.with_samples(vals), grid.x0))
}

/// Smallest `C` with `|φ^{(n)}(x)| ≤ C |I|^{−n−1/2} (1 + |x − c(I)|/|I|)^{−10}`,
/// `n = 0, 1`, for `φ = e^{−2πi c(ω) x} ψ` (derivative by finite differences).
pub fn adaptedness(packet: &GridSignal, tile: &Tile) -> f64 {
    let len = crate::dyadic::to_f64(&tile.time.length());
    let c_i = crate::dyadic::to_f64(&tile.time.center());
    let c_w = crate::dyadic::to_f64(&tile.freq.center());
    let phi = packet.modulate(-c_w);
    let ders = crate::signal::fd_derivatives(&phi, 1);
    let mut worst = 0.0f64;
    for (n, d) in ders.iter().enumerate() {
        for (k, z) in d.iter().enumerate() {
            let x = phi.x(k);
            let bound = len.powf(-(n as f64) - 0.5) * (1.0 + (x - c_i).abs() / len).powi(-10);
            worst = worst.max(z.norm() / bound);
        }
    }
    worst
}

/// Relative spectral mass of `ψ(· + τ)` outside `[8, 9]`, sampled on `[0, 17]`.
pub fn theta_leak(psi: &dyn Func) -> f64 {
    let (mut inside, mut outside) = (0.0f64, 0.0f64);
    for i in 0..=17 * 256 {
        let xi = i as f64 / 256.0;
        let e = psi.hat(xi).norm_sqr() + psi.hat(-xi).norm_sqr();
        if (8.0..=9.0).contains(&xi) {
            inside += e;
        } else {
            outside += e;
        }
    }
    (outside / inside.max(1e-300)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Caps {
    /// Largest `|n|_∞` kept in the expansion.
    pub n_max: i64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { n_max: 8 }
    }
}

impl Caps {
    /// Every residue of the period.
    pub fn full(period: usize) -> Self {
        Caps {
            n_max: period as i64 / 2,
        }
    }
}

/// Signed representative of `n mod P` in `[−P/2, P/2)`.
fn signed(n: usize, period: usize) -> i64 {
    let n = n as i64;
    let p = period as i64;
    if n >= p / 2 {
        n - p
    } else {
        n
    }
}

/// `c′(n₁, n₂)` for `ℓ ≡ α`, as a `P × P` array indexed by `n mod P`:
/// `P^{−2} Σ ρ̂(k₁/P − ℓ/3) ρ̂(k₂/P − (ℓ−a)/3) ψ̂₀((k₁−k₂)/P) ρ̂((k₁+k₂)/P − (2ℓ−a−b)/3) e^{−2πi(k₁n₁+k₂n₂)/P}`
/// where `ψ̂₀` is supplied on the lattice `j/P`.
pub fn coefficient_table(
    psi0_hat: &dyn Fn(i64) -> C64,
    window: &WindowRho,
    period: usize,
    alpha: i64,
    a: i64,
    b: i64,
) -> Vec<C64> {
    let l1 = alpha;
    let l2 = alpha - a;
    let l3 = 2 * alpha - a - b;
    let p = period as f64;
    let r1: Vec<(i64, f64)> = support_range(window, period, l1)
        .map(|k| (k, window.hat(k as f64 / p - l1 as f64 / 3.0)))
        .filter(|(_, w)| *w != 0.0)
        .collect();
    let r2: Vec<(i64, f64)> = support_range(window, period, l2)
        .map(|k| (k, window.hat(k as f64 / p - l2 as f64 / 3.0)))
        .filter(|(_, w)| *w != 0.0)
        .collect();
    let mut g = vec![C64::new(0.0, 0.0); period * period];
    let mut any = false;
    for &(k1, w1) in &r1 {
        for &(k2, w2) in &r2 {
            let w3 = window.hat((k1 + k2) as f64 / p - l3 as f64 / 3.0);
            if w3 == 0.0 {
                continue;
            }
            let ps = psi0_hat(k1 - k2);
            if ps == C64::new(0.0, 0.0) {
                continue;
            }
            any = true;
            let i1 = k1.rem_euclid(period as i64) as usize;
            let i2 = k2.rem_euclid(period as i64) as usize;
            g[i1 * period + i2] += ps * (w1 * w2 * w3);
        }
    }
    if !any {
        return g;
    }
    // forward 2D DFT gives Σ g e^{−2πi(k₁n₁+k₂n₂)/P}
    for row in g.chunks_mut(period) {
        fft_inplace(row, false);
    }
    let mut col = vec![C64::new(0.0, 0.0); period];
    for j in 0..period {
        for i in 0..period {
            col[i] = g[i * period + j];
        }
        fft_inplace(&mut col, false);
        for i in 0..period {
            g[i * period + j] = col[i];
        }
    }
    let norm = 1.0 / (p * p);
    g.iter_mut().for_each(|z| *z *= norm);
    g
}

/// Discretization of `B_{2^s}(ψ, ·, ·)` for `ψ ∈ Θ₀^τ`: coefficient tables
/// `c′_{n₁,n₂}(ℓ mod 3, a, b)` over `21 ≤ a ≤ 30`, `−6 ≤ b ≤ 3`.
#[derive(Clone, Debug)]
pub struct ModelExpansion {
    pub s: i32,
    pub period: usize,
    pub tau: i64,
    pub cap: i64,
    tables: BTreeMap<(i64, i64, i64), Vec<C64>>,
    /// `max |c′|` over `|n|_∞ = r`, before capping.
    pub ring_max: Vec<f64>,
    /// `Σ_{|n|_∞ > cap} |c′| / Σ |c′|`.
    pub tail_mass: f64,
    pub warnings: Vec<String>,
}

impl ModelExpansion {
    pub fn tables(&self) -> impl Iterator<Item = (&(i64, i64, i64), &Vec<C64>)> {
        self.tables.iter()
    }

    /// `c′_{n₁,n₂,v,ℓ,a,b}` (independent of `v`).
    pub fn coefficient(&self, n1: i64, n2: i64, l: i64, a: i64, b: i64) -> C64 {
        if n1.abs().max(n2.abs()) > self.cap {
            return C64::new(0.0, 0.0);
        }
        let p = self.period as i64;
        match self.tables.get(&(l.rem_euclid(3), a, b)) {
            Some(t) => t[(n1.rem_euclid(p) * p + n2.rem_euclid(p)) as usize],
            None => C64::new(0.0, 0.0),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.ring_max.iter().cloned().fold(0.0, f64::max)
    }

    /// `ln(M(r₀)/M(r₁)) / ln((1+r₁)/(1+r₀))` with `M(r) = max_{|n|_∞ = r} |c′|`.
    pub fn decay_exponent(&self, r0: usize, r1: usize) -> f64 {
        (self.ring_max[r0] / self.ring_max[r1]).ln() / ((1.0 + r1 as f64) / (1.0 + r0 as f64)).ln()
    }

    /// CSV `a,b,n1,n2,v,l,re,im`, one row per nonzero coefficient inside the
    /// cap with `v = 0` and `l ∈ {0,1,2}` the residue, after a `#` metadata line.
    pub fn write_csv(&self, mut w: impl Write) -> Result<(), WaveError> {
        writeln!(w, "# s={} period={} tau={} cap={}", self.s, self.period, self.tau, self.cap)?;
        writeln!(w, "a,b,n1,n2,v,l,re,im")?;
        let p = self.period;
        for (&(alpha, a, b), t) in &self.tables {
            for i in 0..p {
                for j in 0..p {
                    let z = t[i * p + j];
                    if z == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let (n1, n2) = (signed(i, p), signed(j, p));
                    writeln!(w, "{a},{b},{n1},{n2},0,{alpha},{},{}", z.re, z.im)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<ModelExpansion, WaveError> {
        let mut lines = r.lines();
        let meta = lines.next().ok_or_else(|| WaveError::Malformed("empty".into()))??;
        let mut kv = BTreeMap::new();
        for part in meta.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = part.split_once('=') {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<i64, WaveError> {
            kv.get(k)
                .ok_or_else(|| WaveError::Malformed(format!("missing {k}")))?
                .parse()
                .map_err(|_| WaveError::Malformed(format!("bad {k}")))
        };
        let (s, period, tau, cap) = (get("s")? as i32, get("period")? as usize, get("tau")?, get("cap")?);
        let mut tables: BTreeMap<(i64, i64, i64), Vec<C64>> = BTreeMap::new();
        let header = lines.next().ok_or_else(|| WaveError::Malformed("no header".into()))??;
        if header.trim() != "a,b,n1,n2,v,l,re,im" {
            return Err(WaveError::Malformed(header));
        }
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(WaveError::Malformed(line));
            }
            let int = |i: usize| f[i].parse::<i64>().map_err(|_| WaveError::Malformed(line.clone()));
            let fl = |i: usize| f[i].parse::<f64>().map_err(|_| WaveError::Malformed(line.clone()));
            let (a, b, n1, n2, l) = (int(0)?, int(1)?, int(2)?, int(3)?, int(5)?);
            let p = period as i64;
            let t = tables.entry((l, a, b)).or_insert_with(|| vec![C64::new(0.0, 0.0); period * period]);
            t[(n1.rem_euclid(p) * p + n2.rem_euclid(p)) as usize] = C64::new(fl(6)?, fl(7)?);
        }
        Ok(ModelExpansion {
            s,
            period,
            tau,
            cap,
            tables,
            ring_max: vec![],
            tail_mass: f64::NAN,
            warnings: vec![],
        })
    }
}

/// Tables of `ψ̂₀(j/P) = ψ̂(j/P) e^{2πiτ j/P}` over the needed lattice range.
fn psi0_lattice(psi: &dyn Func, tau: i64, period: usize) -> (i64, Vec<C64>) {
    let p = period as i64;
    let lo = 6 * p;
    let hi = 11 * p;
    let vals = (lo..=hi)
        .into_par_iter()
        .map(|j| {
            let eta = j as f64 / p as f64;
            psi.hat(eta) * cis(tau as f64 * eta)
        })
        .collect();
    (lo, vals)
}

pub fn discretize(
    psi: &dyn Func,
    tau: i64,
    s: i32,
    window: &WindowRho,
    grid: &GridSpec,
    caps: Caps,
) -> Result<ModelExpansion, WaveError> {
    check_centered(grid)?;
    let leak = theta_leak(psi);
    if leak > 1e-8 {
        return Err(WaveError::NotTheta(leak));
    }
    let period = position_period(grid, s)?;
    let (lo, lattice) = psi0_lattice(psi, tau, period);
    let psi0 = |j: i64| -> C64 {
        let i = j - lo;
        if i < 0 || i >= lattice.len() as i64 {
            C64::new(0.0, 0.0)
        } else {
            lattice[i as usize]
        }
    };
    let keys: Vec<(i64, i64, i64)> = (0..3)
        .flat_map(|al| (21..=30).flat_map(move |a| (-6..=3).map(move |b| (al, a, b))))
        .collect();
    let raw: Vec<((i64, i64, i64), Vec<C64>)> = keys
        .par_iter()
        .map(|&(al, a, b)| ((al, a, b), coefficient_table(&psi0, window, period, al, a, b)))
        .collect();
    let half = period / 2;
    let mut ring_max = vec![0.0f64; half + 1];
    let (mut total, mut tail) = (0.0, 0.0);
    let mut tables = BTreeMap::new();
    for (key, mut t) in raw {
        if t.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            continue;
        }
        for i in 0..period {
            for j in 0..period {
                let r = signed(i, period).abs().max(signed(j, period).abs());
                let z = &mut t[i * period + j];
                let m = z.norm();
                ring_max[r as usize] = ring_max[r as usize].max(m);
                total += m;
                if r > caps.n_max {
                    tail += m;
                    *z = C64::new(0.0, 0.0);
                }
            }
        }
        tables.insert(key, t);
    }
    let tail_mass = tail / total.max(1e-300);
    let mut warnings = vec![];
    let top = ring_max.iter().cloned().fold(0.0, f64::max);
    let cap = caps.n_max.min(half as i64);
    if (cap as usize) < half && ring_max[cap as usize + 1] > 1e-13 * top {
        warnings.push(format!(
            "cap |n| <= {cap} stops above the noise floor: tail mass {tail_mass:.3e}"
        ));
    }
    Ok(ModelExpansion {
        s,
        period,
        tau,
        cap,
        tables,
        ring_max,
        tail_mass,
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub signal: GridSignal,
    /// Product of row norms dropped as negligible, relative to the largest.
    pub skipped: f64,
}

/// Evaluates `Σ_{a,b,n,v,ℓ} |I_{p₃}|^{−1/2} ⟨f₁, ψ_{v−τ+n₁,ℓ}⟩ ⟨f₂, ψ_{v+τ+n₂,ℓ−a}⟩ c′ ψ_{v,2ℓ−a−b}`.
pub fn reconstruct(exp: &ModelExpansion, window: &WindowRho, f1: &GridSignal, f2: &GridSignal) -> Result<Reconstruction, WaveError> {
    let c1 = wave_packet_expand(f1, window, exp.s)?;
    let c2 = wave_packet_expand(f2, window, exp.s)?;
    if c1.period != exp.period {
        return Err(WaveError::ScaleMismatch(c1.period as i32, exp.period as i32));
    }
    let p = exp.period;
    let pi = p as i64;
    let tau = exp.tau;
    let n1max = c1.l_range().map(|l| c1.row_norm(l)).fold(0.0, f64::max);
    let n2max = c2.l_range().map(|l| c2.row_norm(l)).fold(0.0, f64::max);
    let floor = 1e-18 * n1max * n2max;
    let per_table: Vec<(Vec<(i64, Vec<C64>)>, f64)> = exp
        .tables
        .par_iter()
        .map(|(&(alpha, a, b), t)| {
            let mut out = Vec::new();
            let mut skipped = 0.0f64;
            let rows: Vec<(i64, Vec<C64>)> = (0..p)
                .filter(|&i| t[i * p..(i + 1) * p].iter().any(|z| *z != C64::new(0.0, 0.0)))
                .map(|i| {
                    let mut h = t[i * p..(i + 1) * p].to_vec();
                    fft_inplace(&mut h, true);
                    (i as i64, h)
                })
                .collect();
            for l in c1.l_range() {
                if (l - alpha).rem_euclid(3) != 0 {
                    continue;
                }
                let weight = c1.row_norm(l) * c2.row_norm(l - a);
                if weight <= floor {
                    skipped = skipped.max(weight);
                    continue;
                }
                let (r1, r2) = (c1.row(l).unwrap(), c2.row(l - a).unwrap());
                let a1: Vec<C64> = (0..pi).map(|w| r1[(w - tau).rem_euclid(pi) as usize]).collect();
                let mut a2: Vec<C64> = (0..pi).map(|w| r2[(w + tau).rem_euclid(pi) as usize]).collect();
                fft_inplace(&mut a2, false);
                let mut term = vec![C64::new(0.0, 0.0); p];
                let mut h = vec![C64::new(0.0, 0.0); p];
                for (n1, rh) in &rows {
                    for k in 0..p {
                        h[k] = rh[k] * a2[k];
                    }
                    fft_inplace(&mut h, true);
                    for v in 0..pi {
                        term[v as usize] += a1[((v + n1).rem_euclid(pi)) as usize] * h[v as usize] / p as f64;
                    }
                }
                out.push((2 * l - a - b, term));
            }
            (out, skipped)
        })
        .collect();
    let mut d: BTreeMap<i64, Vec<C64>> = BTreeMap::new();
    let mut skipped = 0.0f64;
    for (terms, sk) in per_table {
        skipped = skipped.max(sk);
        for (l3, term) in terms {
            let row = d.entry(l3).or_insert_with(|| vec![C64::new(0.0, 0.0); p]);
            for (x, y) in row.iter_mut().zip(term) {
                *x += y;
            }
        }
    }
    // synthesize Σ_v d[ℓ₃][v] |I|^{−1/2} ψ^{(s)}_{v,ℓ₃}
    let grid = c1.grid;
    let half = (grid.n / 2) as i64;
    let mut spec = vec![C64::new(0.0, 0.0); grid.n];
    for (l3, mut row) in d {
        fft_inplace(&mut row, false);
        for k in support_range(window, p, l3) {
            if k < -half || k >= half {
                continue;
            }
            let w = window.hat(k as f64 / p as f64 - l3 as f64 / 3.0);
            spec[(k + half) as usize] += row[k.rem_euclid(pi) as usize] * w;
        }
    }
    let probe = f1.fourier();
    let signal = GridSignal::inverse_fourier(&probe.with_samples(spec), grid.x0);
    Ok(Reconstruction {
        signal,
        skipped: if n1max * n2max > 0.0 { skipped / (n1max * n2max) } else { 0.0 },
    })
}

/// `Λ = Σ_p |I_{p₃}|^{−1/2} Π_k |⟨f_k, ψ_{p,k}⟩|`, summed in tile order.
pub fn model_form(tiles: &[TriTile], coef: &dyn Fn(&TriTile, usize) -> C64) -> f64 {
    let mut sorted: Vec<&TriTile> = tiles.iter().collect();
    sorted.sort();
    sorted
        .into_iter()
        .map(|p| {
            let w = 2f64.powf(-(p.s as f64) / 2.0);
            w * (1..=3).map(|k| coef(p, k).norm()).product::<f64>()
        })
        .sum()
}

/// Packet coefficients of the lemma for a tri-tile at shift `n`:
/// `(1+|n|)^{−10}⟨f₁, ψ_{v−τ+n₁,ℓ}⟩`, `(1+|n|)^{−10}⟨f₂, ψ_{v+τ+n₂,ℓ−a}⟩`,
/// `(1+|n|)^{30} c̄′ ⟨f₃, ψ_{v,2ℓ−a−b}⟩`.
pub fn lemma_coefficient(
    p: &TriTile,
    k: usize,
    n: (i64, i64),
    coefs: [&PacketCoefficients; 3],
    exp: &ModelExpansion,
) -> C64 {
    let norm = ((n.0 * n.0 + n.1 * n.1) as f64).sqrt();
    let (a, b) = (p.nu.a, p.nu.b);
    match k {
        1 => coefs[0].get(p.v - p.tau + n.0, p.l) * (1.0 + norm).powi(-10),
        2 => coefs[1].get(p.v + p.tau + n.1, p.l - a) * (1.0 + norm).powi(-10),
        _ => exp.coefficient(n.0, n.1, p.l, a, b).conj() * coefs[2].get(p.v, 2 * p.l - a - b) * (1.0 + norm).powi(30),
    }
}

/// Unit-scale `ψ₀ ∈ Θ₀`: a smooth bump in frequency on `[8, 9]`.
pub fn theta_bump() -> crate::signal::FreqBump {
    crate::signal::FreqBump::new(|xi| C64::new(bump(xi, 8.5, 0.5, 2.0), 0.0), 8.0, 9.0, 24.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{bilinear_average_spectral, Gaussian};

    #[test]
    fn window_invariants() {
        let w = build_window().unwrap();
        assert!(w.partition_residual(10007) < 1e-12);
        assert_eq!(w.hat(0.05), 0.0);
        assert_eq!(w.hat(0.95), 0.0);
        assert!(w.hat(0.5) > 0.0);
        let g = GridSpec::default();
        let p0 = wave_packet(&w, &g, 0, 0, 0).unwrap();
        let p3 = wave_packet(&w, &g, 0, 0, 3).unwrap();
        assert!(p0.inner(&p3).norm() < 1e-10);
        assert!((p0.l2().powi(2) - 1.0 / 3.0).abs() < 1e-10);
        let prof = w.decay_profile();
        assert!(prof.windows(2).all(|x| x[1].1 <= x[0].1));
    }

    #[test]
    fn params_round_trip() {
        let w = build_window().unwrap();
        let mut buf = Vec::new();
        w.write_params(&mut buf).unwrap();
        let back = WindowRho::read_params(buf.as_slice()).unwrap();
        assert_eq!(back.params(), w.params());
    }

    #[test]
    fn frame_resynthesis() {
        let w = build_window().unwrap();
        let g = GridSpec::default();
        let f = wave_packet(&w, &g, 0, 0, 0).unwrap();
        let c = wave_packet_expand(&f, &w, 0).unwrap();
        let back = synthesize(&c, &w);
        assert!(back.sub(&f).l2() <= 1e-8 * f.l2());
        assert!((c.get(0, 0) - C64::new(1.0 / 3.0, 0.0)).norm() < 1e-10);
        let gauss = g.sample(&Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 0.3,
            width: 1.0,
            freq: 1.0,
        });
        for s in [0, 1, -1] {
            let c = wave_packet_expand(&gauss, &w, s).unwrap();
            let back = synthesize(&c, &w);
            assert!(back.sub(&gauss).l2() <= 1e-6 * gauss.l2(), "s={s}");
            assert!((c.energy() - gauss.l2().powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_frequency_support() {
        let w = build_window().unwrap();
        let g = GridSpec::default();
        let xi = 1.25;
        let f = g.sample_fn(|x| cis(xi * x));
        let c = wave_packet_expand(&f, &w, 0).unwrap();
        let top = c.l_range().map(|l| c.row_norm(l)).fold(0.0, f64::max);
        for l in c.l_range() {
            let inside = w.hat(xi - l as f64 / 3.0) > 0.0;
            let on = c.row_norm(l) > 1e-12 * top;
            assert_eq!(inside, on, "l={l}");
        }
    }

    fn psi_theta() -> crate::signal::FreqBump {
        theta_bump()
    }

    #[test]
    fn coefficients_vanish_outside_window() {
        let w = build_window().unwrap();
        let psi = psi_theta();
        let period = 64;
        let psi0 = |j: i64| psi.hat(j as f64 / period as f64);
        let mut top = 0.0f64;
        let mut outside = 0.0f64;
        for alpha in 0..3 {
            for a in 18..=33 {
                for b in -9..=6 {
                    let t = coefficient_table(&psi0, &w, period, alpha, a, b);
                    let m = t.iter().map(|z| z.norm()).fold(0.0, f64::max);
                    if (22..=29).contains(&a) && (-5..=2).contains(&b) {
                        top = top.max(m);
                    } else {
                        outside = outside.max(m);
                    }
                }
            }
        }
        assert!(top > 0.0);
        assert_eq!(outside, 0.0);
    }

    #[test]
    fn reconstruction_matches_direct_average() {
        let w = build_window().unwrap();
        let grid = GridSpec::centered(6, 1 << 13);
        for (s, tau) in [(0i32, 3i64), (1, -2)] {
            let t = 2f64.powi(s);
            let psi = psi_theta().translated(tau as f64);
            let exp = discretize(&psi, tau, s, &w, &grid, Caps::full(position_period(&grid, s).unwrap())).unwrap();
            let sh = t * tau as f64;
            let f1 = grid.sample(&Gaussian {
                amp: C64::new(1.0, 0.0),
                center: -sh + 0.4,
                width: 1.5 * t,
                freq: 4.3 / t,
            });
            let f2 = grid.sample(&Gaussian {
                amp: C64::new(0.5, -0.2),
                center: sh - 0.3,
                width: t,
                freq: -4.1 / t,
            });
            let direct = bilinear_average_spectral(&psi, &f1, &f2, t).unwrap();
            let model = reconstruct(&exp, &w, &f1, &f2).unwrap();
            let err = model.signal.sub(&direct).l2() / direct.l2();
            assert!(direct.l2() > 1e-3, "trivial average");
            assert!(err < 1e-9, "s={s} err={err}");
        }
    }

    #[test]
    fn expansion_csv_reload_is_exact() {
        let w = build_window().unwrap();
        let grid = GridSpec::default();
        let psi = psi_theta().translated(1.0);
        let exp = discretize(&psi, 1, 0, &w, &grid, Caps { n_max: 4 }).unwrap();
        assert!(!exp.warnings.is_empty());
        let mut buf = Vec::new();
        exp.write_csv(&mut buf).unwrap();
        let back = ModelExpansion::read_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        let f1 = grid.sample(&Gaussian {
            amp: C64::new(1.0, 0.0),
            center: -1.0,
            width: 1.0,
            freq: 4.3,
        });
        let f2 = grid.sample(&Gaussian {
            amp: C64::new(1.0, 0.0),
            center: 1.0,
            width: 1.0,
            freq: -4.2,
        });
        let r1 = reconstruct(&exp, &w, &f1, &f2).unwrap();
        let r2 = reconstruct(&back, &w, &f1, &f2).unwrap();
        assert_eq!(r1.signal, r2.signal);
        let zero = grid.sample_fn(|_| C64::new(0.0, 0.0));
        assert_eq!(reconstruct(&exp, &w, &zero, &zero).unwrap().signal.sup(), 0.0);
    }

    #[test]
    fn model_form_basics() {
        use crate::dyadic::{make_tritile, NuParams, ShiftSequence};
        let nu = NuParams::new(25, 0, 0, 1).unwrap();
        let shifts = ShiftSequence::constant(2, 3, -20..=20).unwrap();
        let p = make_tritile(nu, &shifts, 0, 4, 7).unwrap();
        let q = make_tritile(nu, &shifts, 0, 5, 10).unwrap();
        let coef = |t: &TriTile, k: usize| C64::new((t.v + k as i64) as f64, 1.0);
        assert_eq!(model_form(&[], &coef), 0.0);
        let one = model_form(std::slice::from_ref(&p), &coef);
        let expect: f64 = (1..=3).map(|k| coef(&p, k).norm()).product();
        assert_eq!(one, expect);
        let both = model_form(&[p.clone(), q.clone()], &coef);
        assert!(both >= one);
        assert_eq!(both, model_form(&[q, p], &coef));
    }
}
