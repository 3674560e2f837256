//! Exact rational geometry of dyadic intervals, tiles and tri-tiles.
//!
//! Everything here is computed with arbitrary-precision rationals; no
//! floating point enters any predicate.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number, always kept in lowest terms with positive denominator.
pub type Rational = BigRational;

/// Shorthand constructor `n/d`.
pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// `2^e` for any integer exponent.
pub fn pow2(e: i64) -> Rational {
    if e >= 0 {
        Rational::from_integer(BigInt::one() << (e as usize))
    } else {
        Rational::new(BigInt::one(), BigInt::one() << ((-e) as usize))
    }
}

pub fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DyadicError {
    #[error("empty or reversed interval [{0}, {1})")]
    EmptyInterval(String, String),
    #[error("nu parameter {name}={value} outside [{lo}, {hi}]")]
    NuOutOfRange {
        name: &'static str,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error("scale congruence violated: s={s} is not {s_prime} mod 10")]
    ScaleCongruence { s: i64, s_prime: i64 },
    #[error("frequency congruence violated: l={l} is not {alpha} mod 3")]
    FreqCongruence { l: i64, alpha: i64 },
    #[error("scale {0} is outside the shift sequence domain")]
    ScaleOutsideShifts(i64),
    #[error("shift tau_{s}={tau} violates 2^(m-1) <= |tau| <= 2^m for m={m}")]
    ShiftBound { s: i64, tau: i64, m: u32 },
    #[error("trees do not share a common (i, j) type")]
    MixedTreeTypes,
    #[error("index {0} is not in {{1,2,3}}")]
    BadIndex(usize),
    #[error("k={0} coincides with the tree frequency index")]
    KEqualsI(usize),
    #[error("lacunarity violated by tile (s={s}, v={v}, l={l}) for i'={i_prime}: xi'={xi}")]
    Lacunarity {
        s: i64,
        v: i64,
        l: i64,
        i_prime: usize,
        xi: String,
    },
    #[error("tree is empty")]
    EmptyTree,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Half-open interval `[left, right)` with rational endpoints.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RInterval {
    left: Rational,
    right: Rational,
}

impl RInterval {
    pub fn new(left: Rational, right: Rational) -> Result<Self, DyadicError> {
        if left >= right {
            return Err(DyadicError::EmptyInterval(left.to_string(), right.to_string()));
        }
        Ok(RInterval { left, right })
    }

    /// `scale * [n, n+1)`
    pub fn scaled_unit(scale: &Rational, n: &Rational) -> Self {
        RInterval {
            left: scale * n,
            right: scale * (n + Rational::one()),
        }
    }

    pub fn left(&self) -> &Rational {
        &self.left
    }

    pub fn right(&self) -> &Rational {
        &self.right
    }

    pub fn length(&self) -> Rational {
        &self.right - &self.left
    }

    pub fn center(&self) -> Rational {
        (&self.left + &self.right) / int(2)
    }

    pub fn contains(&self, x: &Rational) -> bool {
        &self.left <= x && x < &self.right
    }

    /// `self ⊂ other`
    pub fn is_subset_of(&self, other: &RInterval) -> bool {
        other.left <= self.left && self.right <= other.right
    }

    pub fn is_strict_subset_of(&self, other: &RInterval) -> bool {
        self.is_subset_of(other) && self != other
    }

    pub fn intersects(&self, other: &RInterval) -> bool {
        self.left < other.right && other.left < self.right
    }

    /// Interval with the same center and `c` times the length.
    pub fn dilate(&self, c: &Rational) -> RInterval {
        let center = self.center();
        let half = self.length() * c / int(2);
        RInterval {
            left: &center - &half,
            right: center + half,
        }
    }

    pub fn translate(&self, t: &Rational) -> RInterval {
        RInterval {
            left: &self.left + t,
            right: &self.right + t,
        }
    }

    pub fn scale(&self, c: &Rational) -> RInterval {
        assert!(c.is_positive());
        RInterval {
            left: &self.left * c,
            right: &self.right * c,
        }
    }
}

impl fmt::Display for RInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.left, self.right)
    }
}

/// Whether `[lo, hi)` is contained in `outer \ hole` where both are half-open.
pub fn interval_in_annulus(inner: &RInterval, outer: &RInterval, hole: &RInterval) -> bool {
    inner.is_subset_of(outer) && !inner.intersects(hole)
}

/// Exponent `e` with `x = 2^e`, if `x` is an integral power of two.
pub fn log2_exact(x: &Rational) -> Option<i64> {
    if !x.is_positive() {
        return None;
    }
    let n = x.numer();
    let d = x.denom();
    let is_pow2 = |v: &BigInt| v.is_positive() && (v & (v - BigInt::one())).is_zero();
    if d.is_one() && is_pow2(n) {
        Some(n.bits() as i64 - 1)
    } else if n.is_one() && is_pow2(d) {
        Some(-(d.bits() as i64 - 1))
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tile {
    pub time: RInterval,
    pub freq: RInterval,
}

impl Tile {
    pub fn new(time: RInterval, freq: RInterval) -> Self {
        debug_assert!((time.length() * freq.length()).is_one());
        Tile { time, freq }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NuParams {
    pub a: i64,
    pub b: i64,
    pub s_prime: i64,
    pub alpha: i64,
}

impl NuParams {
    pub fn new(a: i64, b: i64, s_prime: i64, alpha: i64) -> Result<Self, DyadicError> {
        let check = |name, value, lo, hi| {
            if value < lo || value > hi {
                Err(DyadicError::NuOutOfRange { name, value, lo, hi })
            } else {
                Ok(())
            }
        };
        check("a", a, 21, 30)?;
        check("b", b, -6, 3)?;
        check("sPrime", s_prime, 0, 9)?;
        check("alpha", alpha, 0, 2)?;
        Ok(NuParams { a, b, s_prime, alpha })
    }

    /// All 10 * 10 * 10 * 3 admissible parameter quadruples.
    pub fn all() -> impl Iterator<Item = NuParams> {
        (21..=30).flat_map(|a| {
            (-6..=3).flat_map(move |b| {
                (0..=9).flat_map(move |sp| (0..=2).map(move |al| NuParams { a, b, s_prime: sp, alpha: al }))
            })
        })
    }

    /// Grid labels `(εα, ε(α−a), ε(2α−a−b)) mod 3` with `ε = (−1)^{s'}`.
    pub fn grid_labels(&self) -> [u8; 3] {
        let eps = if self.s_prime % 2 == 0 { 1 } else { -1 };
        let m3 = |x: i64| (eps * x).rem_euclid(3) as u8;
        [
            m3(self.alpha),
            m3(self.alpha - self.a),
            m3(2 * self.alpha - self.a - self.b),
        ]
    }
}

/// Shift sequence `s ↦ τ_s` on a finite set of scales with `2^{m−1} ≤ |τ_s| ≤ 2^m`.
/// For `m = 0` the only admissible values are `±1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftSequence {
    m: u32,
    tau: BTreeMap<i64, i64>,
}

pub fn shift_bounds(m: u32) -> (i64, i64) {
    if m == 0 {
        (1, 1)
    } else {
        (1i64 << (m - 1), 1i64 << m)
    }
}

impl ShiftSequence {
    pub fn new(m: u32, tau: BTreeMap<i64, i64>) -> Result<Self, DyadicError> {
        let (lo, hi) = shift_bounds(m);
        for (&s, &t) in &tau {
            if t.abs() < lo || t.abs() > hi {
                return Err(DyadicError::ShiftBound { s, tau: t, m });
            }
        }
        Ok(ShiftSequence { m, tau })
    }

    /// Same shift at every listed scale.
    pub fn constant(m: u32, tau: i64, scales: impl IntoIterator<Item = i64>) -> Result<Self, DyadicError> {
        Self::new(m, scales.into_iter().map(|s| (s, tau)).collect())
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn tau(&self, s: i64) -> Option<i64> {
        self.tau.get(&s).copied()
    }

    pub fn scales(&self) -> impl Iterator<Item = i64> + '_ {
        self.tau.keys().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TriTile {
    pub p: [Tile; 3],
    pub s: i64,
    pub v: i64,
    pub l: i64,
    pub tau: i64,
    pub nu: NuParams,
}

impl TriTile {
    /// Tile of component `i ∈ {1,2,3}`.
    pub fn tile(&self, i: usize) -> &Tile {
        &self.p[i - 1]
    }

    pub fn time(&self, i: usize) -> &RInterval {
        &self.p[i - 1].time
    }

    pub fn freq(&self, i: usize) -> &RInterval {
        &self.p[i - 1].freq
    }

    /// Frequency index of component `i`: `ℓ`, `ℓ − a`, `2ℓ − a − b`.
    pub fn freq_index(&self, i: usize) -> i64 {
        match i {
            1 => self.l,
            2 => self.l - self.nu.a,
            3 => 2 * self.l - self.nu.a - self.nu.b,
            _ => panic!("component index {i} not in 1..=3"),
        }
    }

    /// Position index of the time interval of component `i` in units of `2^s`.
    pub fn time_index(&self, i: usize) -> i64 {
        match i {
            1 => self.v - self.tau,
            2 => self.v + self.tau,
            3 => self.v,
            _ => panic!("component index {i} not in 1..=3"),
        }
    }

    fn key(&self) -> (i64, i64, i64, NuParams, i64) {
        (self.s, self.v, self.l, self.nu, self.tau)
    }
}

impl PartialOrd for TriTile {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TriTile {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

fn check_congruences(nu: &NuParams, s: i64, l: i64) -> Result<(), DyadicError> {
    if (s - nu.s_prime).rem_euclid(10) != 0 {
        return Err(DyadicError::ScaleCongruence { s, s_prime: nu.s_prime });
    }
    if (l - nu.alpha).rem_euclid(3) != 0 {
        return Err(DyadicError::FreqCongruence { l, alpha: nu.alpha });
    }
    Ok(())
}

/// Builds `p_ν(s, v, ℓ)` from an explicit shift value.
pub fn tritile_with_tau(nu: NuParams, s: i64, v: i64, l: i64, tau: i64) -> Result<TriTile, DyadicError> {
    check_congruences(&nu, s, l)?;
    let ts = pow2(s);
    let fs = pow2(-s);
    let time = |n: i64| RInterval::scaled_unit(&ts, &int(n));
    let freq = |k: i64| RInterval::scaled_unit(&fs, &rat(k, 3));
    let p1 = Tile::new(time(v - tau), freq(l));
    let p2 = Tile::new(time(v + tau), freq(l - nu.a));
    let p3 = Tile::new(time(v), freq(2 * l - nu.a - nu.b));
    Ok(TriTile {
        p: [p1, p2, p3],
        s,
        v,
        l,
        tau,
        nu,
    })
}

pub fn make_tritile(nu: NuParams, shifts: &ShiftSequence, s: i64, v: i64, l: i64) -> Result<TriTile, DyadicError> {
    check_congruences(&nu, s, l)?;
    let tau = shifts.tau(s).ok_or(DyadicError::ScaleOutsideShifts(s))?;
    tritile_with_tau(nu, s, v, l, tau)
}

/// Members of `P_ν` with `I_{p3}` meeting `window`, scale in `[s_min, s_max]`
/// and `|ℓ| ≤ l_cap`, ordered by `(s, v, ℓ)`.
pub fn enumerate_family(
    nu: NuParams,
    shifts: &ShiftSequence,
    window: &RInterval,
    s_min: i64,
    s_max: i64,
    l_cap: i64,
) -> Vec<TriTile> {
    let mut out = Vec::new();
    if s_min > s_max {
        return out;
    }
    let first_s = s_min + (nu.s_prime - s_min).rem_euclid(10);
    let mut s = first_s;
    while s <= s_max {
        if let Some(tau) = shifts.tau(s) {
            let inv = pow2(-s);
            let lo = (window.left() * &inv).floor().to_integer();
            let hi = (window.right() * &inv).ceil().to_integer();
            let (lo, hi) = (lo.to_i64().unwrap(), hi.to_i64().unwrap());
            for v in lo..hi {
                let i3 = RInterval::scaled_unit(&pow2(s), &int(v));
                if !i3.intersects(window) {
                    continue;
                }
                let l0 = -l_cap + (nu.alpha + l_cap).rem_euclid(3);
                let mut l = l0;
                while l <= l_cap {
                    out.push(tritile_with_tau(nu, s, v, l, tau).expect("congruences hold by construction"));
                    l += 3;
                }
            }
        }
        s += 10;
    }
    out
}

/// The unique `δ ∈ {0,1,2}` with `interval ∈ 𝒟_δ`, if any.
pub fn grid_membership(interval: &RInterval) -> Option<u8> {
    let e = log2_exact(&interval.length())?;
    // length 2^{-s}
    let s = -e;
    let x = interval.left() * pow2(s);
    let frac = &x - x.floor();
    let third = frac * int(3);
    if !third.is_integer() {
        return None;
    }
    let r = third.to_integer().to_i64().unwrap();
    let sign = if s.rem_euclid(2) == 0 { 1 } else { -1 };
    // (−1)^s δ ≡ r (mod 3)
    Some((sign * r).rem_euclid(3) as u8)
}

/// `ω ⊊ ω′ ⇒ |ω| ≤ 2^{−10}|ω′|`.
pub fn sparse_scale_check(w: &RInterval, w_prime: &RInterval) -> bool {
    if w.is_strict_subset_of(w_prime) {
        w.length() * pow2(10) <= w_prime.length()
    } else {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tree {
    pub i: usize,
    pub j: usize,
    pub top: RInterval,
    pub xi: Rational,
    pub tiles: Vec<TriTile>,
}

fn check_index(i: usize) -> Result<(), DyadicError> {
    if (1..=3).contains(&i) {
        Ok(())
    } else {
        Err(DyadicError::BadIndex(i))
    }
}

/// Candidate frequency `ξ′` attached to a tree of frequency type `i` for component `i_prime`.
///
/// For `i ∈ {1,2}` this is `ξ_T` (or `2ξ_T` when `i′ = 3`). For `i = 3` the
/// frequencies of components 1 and 2 move at half the rate of component 3 as `ℓ`
/// varies, so the witness that works uniformly in `ℓ` is `ξ_T / 2`.
pub fn lacunary_witness(i: usize, i_prime: usize, xi: &Rational) -> Rational {
    if i_prime == 3 {
        xi * int(2)
    } else if i == 3 {
        xi / int(2)
    } else {
        xi.clone()
    }
}

/// `ξ′ ∈ 50ω \ 2ω`
pub fn in_lacunary_band(xi_prime: &Rational, w: &RInterval) -> bool {
    w.dilate(&int(50)).contains(xi_prime) && !w.dilate(&int(2)).contains(xi_prime)
}

/// Whether the whole interval `J` of candidate witnesses lies in `50ω \ 2ω`.
pub fn band_contains_interval(j: &RInterval, w: &RInterval) -> bool {
    interval_in_annulus(j, &w.dilate(&int(50)), &w.dilate(&int(2)))
}

pub fn lacunary_frequency(tree: &Tree, i_prime: usize) -> Result<Rational, DyadicError> {
    check_index(i_prime)?;
    if i_prime == tree.i {
        return Err(DyadicError::KEqualsI(i_prime));
    }
    if tree.tiles.is_empty() {
        return Err(DyadicError::EmptyTree);
    }
    let xi_prime = lacunary_witness(tree.i, i_prime, &tree.xi);
    for p in &tree.tiles {
        if !in_lacunary_band(&xi_prime, p.freq(i_prime)) {
            return Err(DyadicError::Lacunarity {
                s: p.s,
                v: p.v,
                l: p.l,
                i_prime,
                xi: xi_prime.to_string(),
            });
        }
    }
    Ok(xi_prime)
}

/// Per-tile form of the lacunarity statement: the image of `3ω_{p_i}` under the
/// witness map lies in `50ω_{p_{i′}} \ 2ω_{p_{i′}}`.
pub fn tile_lacunary(p: &TriTile, i: usize, i_prime: usize) -> bool {
    let w3 = p.freq(i).dilate(&int(3));
    let img = RInterval {
        left: lacunary_witness(i, i_prime, w3.left()),
        right: lacunary_witness(i, i_prime, w3.right()),
    };
    band_contains_interval(&img, p.freq(i_prime))
}

pub fn is_tree(tiles: &[TriTile], i: usize, j: usize, top: &RInterval, xi: &Rational) -> bool {
    let three = int(3);
    tiles
        .iter()
        .all(|p| p.freq(i).dilate(&three).contains(xi) && p.time(j).is_subset_of(top))
}

/// Pairwise `k`-strong disjointness of trees sharing a type `(i, j)`.
pub fn strongly_disjoint(trees: &[Tree], k: usize) -> Result<bool, DyadicError> {
    check_index(k)?;
    let Some(first) = trees.first() else {
        return Ok(true);
    };
    let (i, j) = (first.i, first.j);
    if trees.iter().any(|t| t.i != i || t.j != j) {
        return Err(DyadicError::MixedTreeTypes);
    }
    if i == k {
        return Err(DyadicError::KEqualsI(k));
    }
    for (a, t) in trees.iter().enumerate() {
        for (b, t2) in trees.iter().enumerate() {
            if a == b {
                continue;
            }
            for p in &t.tiles {
                for q in &t2.tiles {
                    if p.freq(k).is_strict_subset_of(q.freq(k)) && q.time(j).is_subset_of(&t.top) {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Outcome of the exhaustive lacunarity sweep.
#[derive(Clone, Debug, Default)]
pub struct LacunaritySweep {
    pub checks: usize,
    pub violations: Vec<(NuParams, i64, i64, usize, usize)>,
}

/// Checks the per-tile lacunarity statement for all `a`, `b`, both parities
/// of `s′`, all `ℓ` in a window covering every residue class, and all `i ≠ i′`.
pub fn lacunarity_sweep(witness: impl Fn(usize, usize, &Rational) -> Rational) -> LacunaritySweep {
    let mut out = LacunaritySweep::default();
    for a in 21..=30 {
        for b in -6..=3 {
            for s_prime in [0i64, 1] {
                for s in [s_prime - 10, s_prime] {
                    for l in -6i64..=6 {
                        let nu = NuParams {
                            a,
                            b,
                            s_prime,
                            alpha: l.rem_euclid(3),
                        };
                        let p = tritile_with_tau(nu, s, 0, l, 1).unwrap();
                        for i in 1..=3 {
                            let w3 = p.freq(i).dilate(&int(3));
                            for ip in (1..=3).filter(|&x| x != i) {
                                out.checks += 1;
                                let img = RInterval {
                                    left: witness(i, ip, w3.left()),
                                    right: witness(i, ip, w3.right()),
                                };
                                if !band_contains_interval(&img, p.freq(ip)) {
                                    out.violations.push((nu, s, l, i, ip));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `[lo_j, hi_j) ⊂ 50ω \ 2ω` for `ω = [0,1) − c`.
pub fn prep_holds(j: &RInterval, c: &Rational) -> bool {
    let w = RInterval::new(-c.clone(), int(1) - c).unwrap();
    band_contains_interval(j, &w)
}

/// Closed-form characterization of `prep_holds` for `J = [−1,2)` and `J = [−2,4)`.
pub fn prep_predicted(which: u8, c: &Rational) -> bool {
    let (a, b, cc, d) = match which {
        1 => (rat(-47, 2), rat(-5, 2), rat(5, 2), rat(47, 2)),
        _ => (rat(-45, 2), rat(-9, 2), rat(7, 2), rat(43, 2)),
    };
    (&a <= c && c <= &b) || (&cc <= c && c <= &d)
}

pub fn prep_interval(which: u8) -> RInterval {
    match which {
        1 => RInterval::new(int(-1), int(2)).unwrap(),
        _ => RInterval::new(int(-2), int(4)).unwrap(),
    }
}

/// Writes one tri-tile per line: `a b sPrime alpha s v l tau`.
pub fn write_family(tiles: &[TriTile]) -> String {
    let mut s = String::new();
    for p in tiles {
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            p.nu.a, p.nu.b, p.nu.s_prime, p.nu.alpha, p.s, p.v, p.l, p.tau
        ));
    }
    s
}

/// Parses the line format of [`write_family`], re-deriving and re-validating every tile.
pub fn read_family(text: &str) -> Result<Vec<TriTile>, DyadicError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Result<Vec<i64>, _> = line.split_whitespace().map(str::parse::<i64>).collect();
        let nums = nums.map_err(|e| DyadicError::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if nums.len() != 8 {
            return Err(DyadicError::Parse {
                line: idx + 1,
                msg: format!("expected 8 fields, found {}", nums.len()),
            });
        }
        let nu = NuParams::new(nums[0], nums[1], nums[2], nums[3])?;
        if nums[7] == 0 {
            return Err(DyadicError::Parse {
                line: idx + 1,
                msg: "tau must be nonzero".into(),
            });
        }
        out.push(tritile_with_tau(nu, nums[4], nums[5], nums[6], nums[7])?);
    }
    Ok(out)
}

/// Dyadic interval `2^s [n, n+1)` represented by its integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dyadic {
    pub s: i64,
    pub n: i64,
}

impl Dyadic {
    pub fn parent(&self) -> Dyadic {
        Dyadic {
            s: self.s + 1,
            n: self.n.div_euclid(2),
        }
    }

    pub fn interval(&self) -> RInterval {
        RInterval::scaled_unit(&pow2(self.s), &int(self.n))
    }

    /// `self ⊂ other`
    pub fn within(&self, other: &Dyadic) -> bool {
        if self.s > other.s {
            return false;
        }
        let shift = (other.s - self.s) as u32;
        if shift >= 63 {
            return (self.n < 0) == (other.n < 0) && other.n == if self.n < 0 { -1 } else { 0 };
        }
        self.n.div_euclid(1i64 << shift) == other.n
    }

    pub fn left_f64(&self) -> f64 {
        (self.n as f64) * 2f64.powi(self.s as i32)
    }

    pub fn len_f64(&self) -> f64 {
        2f64.powi(self.s as i32)
    }
}

/// Time interval of component `j` of `p` as a dyadic pair.
pub fn dyadic_time(p: &TriTile, j: usize) -> Dyadic {
    Dyadic {
        s: p.s,
        n: p.time_index(j),
    }
}
