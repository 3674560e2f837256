//! Sizes of tri-tile collections, the greedy tree selection, the weak Bessel
//! diagnostic, exceptional sets and the refined square-function set.
//!
//! Tree tops are dyadic intervals. The frequency variable `ξ_T` only matters
//! through which `3ω_{p_i}` contain it, so it is enumerated over the atoms cut
//! out by the endpoints of those intervals; each atom is represented by its
//! midpoint.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::ops::RangeInclusive;

use thiserror::Error;

use crate::dyadic::{
    dyadic_time, int, make_tritile, is_tree, lacunary_frequency, lacunary_witness, pow2, strongly_disjoint, to_f64, Dyadic,
    DyadicError, NuParams, RInterval, Rational, ShiftSequence, Tree, TriTile,
};
use crate::signal::{shifted_maximal_grid, GridSignal, GridSpec, SignalError, C64};
use crate::wavepackets::{wave_packet_expand, PacketCoefficients, WaveError, WindowRho};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("precondition violated: {name} = {value:e} exceeds {bound:e}")]
    Precondition { name: String, value: f64, bound: f64 },
    #[error("postcondition violated: {0}")]
    Postcondition(String),
    #[error("single tree estimate falsified: lhs {lhs:e} > rhs {rhs:e}")]
    Falsified { lhs: f64, rhs: f64 },
    #[error("index {0} not in 1..=3")]
    BadIndex(usize),
    #[error("|E1| = {0} exceeds |E2| = {1}")]
    SetOrder(f64, f64),
    #[error("mask length {0} does not match grid length {1}")]
    MaskLength(usize, usize),
    #[error("no shift defined at scale {0}")]
    MissingShift(i64),
    #[error("grid origin {0} is not a multiple of the step")]
    Misaligned(f64),
    #[error(transparent)]
    Dyadic(#[from] DyadicError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn check_index(i: usize) -> Result<(), ForestError> {
    if (1..=3).contains(&i) {
        Ok(())
    } else {
        Err(ForestError::BadIndex(i))
    }
}

/// Coefficients `⟨f, ψ_{p,k}⟩` read off per-scale packet expansions of a grid signal.
pub struct TileCoefficients {
    k: usize,
    by_scale: HashMap<i64, PacketCoefficients>,
}

impl TileCoefficients {
    pub fn from_signal(f: &GridSignal, window: &WindowRho, tiles: &[TriTile], k: usize) -> Result<Self, ForestError> {
        check_index(k)?;
        let mut by_scale = HashMap::new();
        for p in tiles {
            if let std::collections::hash_map::Entry::Vacant(e) = by_scale.entry(p.s) {
                e.insert(wave_packet_expand(f, window, p.s as i32)?);
            }
        }
        Ok(TileCoefficients { k, by_scale })
    }

    pub fn get(&self, p: &TriTile) -> C64 {
        match self.by_scale.get(&p.s) {
            Some(c) => c.get(p.time_index(self.k), p.freq_index(self.k)),
            None => C64::new(0.0, 0.0),
        }
    }
}

fn energies(tiles: &[TriTile], coef: &dyn Fn(&TriTile) -> C64) -> Vec<f64> {
    tiles.iter().map(|p| coef(p).norm_sqr()).collect()
}

/// Atoms of the frequency line for trees of type `i`: sorted distinct endpoints
/// of all `3ω_{p_i}`, and for each tile the half-open atom range `[lo, hi)` it covers.
struct Atoms {
    ends: Vec<Rational>,
    range: Vec<(usize, usize)>,
}

impl Atoms {
    fn new(tiles: &[TriTile], i: usize) -> Atoms {
        let three = int(3);
        let dil: Vec<RInterval> = tiles.iter().map(|p| p.freq(i).dilate(&three)).collect();
        let mut ends: Vec<Rational> = dil.iter().flat_map(|w| [w.left().clone(), w.right().clone()]).collect();
        ends.sort();
        ends.dedup();
        let pos = |x: &Rational| ends.binary_search(x).expect("endpoint present");
        let range = dil.iter().map(|w| (pos(w.left()), pos(w.right()))).collect();
        Atoms { ends, range }
    }

    /// Representative frequency of atom `a`.
    fn xi(&self, a: usize) -> Rational {
        (&self.ends[a] + &self.ends[a + 1]) / int(2)
    }
}

/// Candidate dyadic tops: every ancestor of some `I_{p_j}`, up to the smallest
/// dyadic interval holding all same-side `I_{p_j}`. Member lists are in tile order.
fn candidate_tops(tiles: &[TriTile], j: usize) -> BTreeMap<Dyadic, Vec<usize>> {
    let ds: Vec<Dyadic> = tiles.iter().map(|p| dyadic_time(p, j)).collect();
    let mut stop = [i64::MIN; 2];
    for side in 0..2 {
        let group: Vec<Dyadic> = ds.iter().copied().filter(|d| (d.n < 0) as usize == side).collect();
        let Some(mut s) = group.iter().map(|d| d.s).max() else {
            continue;
        };
        loop {
            let first = ancestor_at(group[0], s);
            if group.iter().all(|d| ancestor_at(*d, s) == first) {
                break;
            }
            s += 1;
        }
        stop[side] = s;
    }
    let mut tops: BTreeMap<Dyadic, Vec<usize>> = BTreeMap::new();
    for (idx, d) in ds.iter().enumerate() {
        let limit = stop[(d.n < 0) as usize];
        let mut cur = *d;
        loop {
            tops.entry(cur).or_default().push(idx);
            if cur.s >= limit {
                break;
            }
            cur = cur.parent();
        }
    }
    tops
}

fn ancestor_at(d: Dyadic, s: i64) -> Dyadic {
    let mut cur = d;
    while cur.s < s {
        cur = cur.parent();
    }
    cur
}

/// For one top, the runs `[a, next)` of atoms with a constant member set and
/// the running energy on each run. Running sums only screen candidates;
/// anything that matters is re-summed in tile order.
fn sweep(members: &[usize], atoms: &Atoms, e: &[f64], keep: &dyn Fn(usize) -> bool) -> Vec<(usize, usize, f64)> {
    let mut ev: Vec<(usize, f64)> = Vec::with_capacity(2 * members.len());
    for &t in members {
        if keep(t) {
            let (lo, hi) = atoms.range[t];
            ev.push((lo, e[t]));
            ev.push((hi, -e[t]));
        }
    }
    ev.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = Vec::new();
    let mut run = 0.0;
    let mut k = 0;
    while k < ev.len() {
        let a = ev[k].0;
        while k < ev.len() && ev[k].0 == a {
            run += ev[k].1;
            k += 1;
        }
        let next = ev.get(k).map_or(a + 1, |x| x.0);
        out.push((a, next, run.max(0.0)));
    }
    out
}

fn members_at(members: &[usize], atoms: &Atoms, a: usize, keep: &dyn Fn(usize) -> bool) -> Vec<usize> {
    members
        .iter()
        .copied()
        .filter(|&t| keep(t) && atoms.range[t].0 <= a && a < atoms.range[t].1)
        .collect()
}

fn exact_sum(set: &[usize], e: &[f64]) -> f64 {
    set.iter().map(|&t| e[t]).sum()
}

const SCREEN: f64 = 1e-9;

/// Largest `Σ_{p∈T} e_p / |I_T|` over `(i, j)`-trees drawn from the tiles with `keep`.
fn max_tree_quotient(tiles: &[TriTile], e: &[f64], i: usize, j: usize, keep: &dyn Fn(usize) -> bool) -> f64 {
    if tiles.is_empty() {
        return 0.0;
    }
    let atoms = Atoms::new(tiles, i);
    let tops = candidate_tops(tiles, j);
    let mut best = 0.0f64;
    for (top, members) in &tops {
        let len = 2f64.powi(top.s as i32);
        let prof = sweep(members, &atoms, e, keep);
        let screen = prof.iter().map(|x| x.2).fold(0.0, f64::max);
        if screen / len < best * (1.0 - SCREEN) {
            continue;
        }
        for &(a, _, run) in &prof {
            if run < screen * (1.0 - SCREEN) || a + 1 >= atoms.ends.len() {
                continue;
            }
            let q = exact_sum(&members_at(members, &atoms, a, keep), e) / len;
            best = best.max(q);
        }
    }
    best
}

/// `size_{i,j,k}(f, P′)` with the coefficients of `f` against `ψ_{p,k}` supplied by `coef`.
pub fn size(tiles: &[TriTile], coef: &dyn Fn(&TriTile) -> C64, i: usize, j: usize, k: usize) -> Result<f64, ForestError> {
    check_index(i)?;
    check_index(j)?;
    check_index(k)?;
    let e = energies(tiles, coef);
    Ok(size_from_energies(tiles, &e, i, j, k))
}

fn size_from_energies(tiles: &[TriTile], e: &[f64], i: usize, j: usize, k: usize) -> f64 {
    if i == k {
        tiles
            .iter()
            .zip(e)
            .map(|(p, &x)| x / 2f64.powi(p.s as i32))
            .fold(0.0, f64::max)
            .sqrt()
    } else {
        max_tree_quotient(tiles, e, i, j, &|_| true).sqrt()
    }
}

/// Exhaustive reference for [`size`] on small families: every subset with a
/// common point in `∩ 3ω_{p_i}` and a common dyadic ancestor of the `I_{p_j}`.
pub fn size_brute_force(
    tiles: &[TriTile],
    coef: &dyn Fn(&TriTile) -> C64,
    i: usize,
    j: usize,
    k: usize,
) -> Result<f64, ForestError> {
    check_index(i)?;
    check_index(j)?;
    check_index(k)?;
    assert!(tiles.len() <= 16, "brute force is exponential");
    let e = energies(tiles, coef);
    if i == k {
        return Ok(size_from_energies(tiles, &e, i, j, k));
    }
    let three = int(3);
    let mut best = 0.0f64;
    for mask in 1u32..(1 << tiles.len()) {
        let set: Vec<usize> = (0..tiles.len()).filter(|t| mask >> t & 1 == 1).collect();
        let (mut lo, mut hi) = {
            let w = tiles[set[0]].freq(i).dilate(&three);
            (w.left().clone(), w.right().clone())
        };
        for &t in &set[1..] {
            let w = tiles[t].freq(i).dilate(&three);
            lo = lo.max(w.left().clone());
            hi = hi.min(w.right().clone());
        }
        if lo >= hi {
            continue;
        }
        let ds: Vec<Dyadic> = set.iter().map(|&t| dyadic_time(&tiles[t], j)).collect();
        if ds.iter().any(|d| (d.n < 0) != (ds[0].n < 0)) {
            continue;
        }
        let mut s = ds.iter().map(|d| d.s).max().unwrap();
        while !ds.iter().all(|d| ancestor_at(*d, s) == ancestor_at(ds[0], s)) {
            s += 1;
        }
        best = best.max(exact_sum(&set, &e) / 2f64.powi(s as i32));
    }
    Ok(best.sqrt())
}

/// Both sides of the single tree estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeBound {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `|Σ_p |I_{p₃}|^{−1/2} ⟨f₁,ψ_{p,1}⟩⟨f₂,ψ_{p,2}⟩⟨f₃,ψ_{p,3}⟩| ≤ |I_T| ∏_k size_{i,j,k}(f_k, T)`.
///
/// The sizes include the tree's own quotient over `I_T`, since `T` is one of
/// the trees the supremum ranges over.
pub fn single_tree_bound(tree: &Tree, coefs: [&dyn Fn(&TriTile) -> C64; 3]) -> Result<TreeBound, ForestError> {
    if !is_tree(&tree.tiles, tree.i, tree.j, &tree.top, &tree.xi) {
        return Err(ForestError::Postcondition("input is not a tree".into()));
    }
    if tree.tiles.is_empty() {
        return Ok(TreeBound { lhs: 0.0, rhs: 0.0, ratio: 0.0 });
    }
    let mut lhs = C64::new(0.0, 0.0);
    for p in &tree.tiles {
        let w = 2f64.powf(-(p.s as f64) / 2.0);
        lhs += coefs[0](p) * coefs[1](p) * coefs[2](p) * w;
    }
    let lhs = lhs.norm();
    let top_len = to_f64(&tree.top.length());
    let mut rhs = top_len;
    for k in 1..=3 {
        let e = energies(&tree.tiles, coefs[k - 1]);
        let mut sz = size_from_energies(&tree.tiles, &e, tree.i, tree.j, k);
        if tree.i != k {
            sz = sz.max((e.iter().sum::<f64>() / top_len).sqrt());
        }
        rhs *= sz;
    }
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
    if lhs > rhs * (1.0 + 1e-12) {
        return Err(ForestError::Falsified { lhs, rhs });
    }
    Ok(TreeBound { lhs, rhs, ratio })
}

/// Which side of `ξ′_T` the frequency `c(ω_{p_k})` sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `ξ′_T > c(ω_{p_k})`
    Greater,
    /// `ξ′_T < c(ω_{p_k})`
    Less,
    /// companion `(k, j)`-tree
    Companion,
}

impl Direction {
    fn symbol(self) -> &'static str {
        match self {
            Direction::Greater => ">",
            Direction::Less => "<",
            Direction::Companion => "S",
        }
    }
}

/// One line of the selection trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub i_prime: usize,
    pub direction: Direction,
    pub xi: f64,
    pub top_left: f64,
    pub top_len: f64,
    pub num_tiles: usize,
    pub energy: f64,
}

#[derive(Clone, Debug)]
pub struct TreeSelection {
    pub k: usize,
    pub j: usize,
    pub lambda: f64,
    /// `𝒯^{>}_{i′}` at index `i′ − 1` (empty for `i′ = k`).
    pub greater: [Vec<Tree>; 3],
    pub less: [Vec<Tree>; 3],
    /// `𝒯_k`, one companion per selected tree, in selection order.
    pub companions: Vec<Tree>,
    pub residual: Vec<TriTile>,
    pub log: Vec<TraceRow>,
}

impl TreeSelection {
    /// `𝒯_{i′}` as a flat list.
    pub fn collection(&self, i_prime: usize) -> Vec<&Tree> {
        if i_prime == self.k {
            self.companions.iter().collect()
        } else {
            self.greater[i_prime - 1].iter().chain(&self.less[i_prime - 1]).collect()
        }
    }

    pub fn all_trees(&self) -> impl Iterator<Item = &Tree> {
        self.greater
            .iter()
            .chain(&self.less)
            .flatten()
            .chain(&self.companions)
    }

    /// `Σ_T |I_T|` over every selected tree, companions included.
    pub fn top_measure(&self) -> f64 {
        self.all_trees().filter(|t| !t.tiles.is_empty()).map(|t| to_f64(&t.top.length())).sum()
    }

    pub fn selected_tiles(&self) -> Vec<TriTile> {
        self.all_trees().flat_map(|t| t.tiles.iter().cloned()).collect()
    }

    pub fn write_trace(&self, mut w: impl Write) -> Result<(), ForestError> {
        writeln!(w, "step,iPrime,direction,xiT,topLeft,topLen,numTiles,energy")?;
        for r in &self.log {
            writeln!(
                w,
                "{},{},{},{:e},{:e},{:e},{},{:e}",
                r.step,
                r.i_prime,
                r.direction.symbol(),
                r.xi,
                r.top_left,
                r.top_len,
                r.num_tiles,
                r.energy
            )?;
        }
        Ok(())
    }
}

fn side_of(p: &TriTile, i_prime: usize, k: usize) -> Direction {
    let xi_prime = lacunary_witness(i_prime, k, &p.freq(i_prime).center());
    if xi_prime > p.freq(k).center() {
        Direction::Greater
    } else {
        Direction::Less
    }
}

/// The greedy decomposition of a tile family into trees.
///
/// Under `ξ′_T` ties the selected tree is maximal by inclusion among the
/// qualifying trees at that frequency; remaining ties go to the smallest top
/// left endpoint, then the smallest top.
pub fn select_trees(
    tiles: &[TriTile],
    coef: &dyn Fn(&TriTile) -> C64,
    k: usize,
    j: usize,
    lambda: f64,
) -> Result<TreeSelection, ForestError> {
    check_index(k)?;
    check_index(j)?;
    let mut tiles = tiles.to_vec();
    tiles.sort();
    tiles.dedup();
    let e = energies(&tiles, coef);
    for i in 1..=3 {
        let v = size_from_energies(&tiles, &e, i, j, k);
        if v > 2.0 * lambda {
            return Err(ForestError::Precondition {
                name: format!("size_{{{i},{j},{k}}}"),
                value: v,
                bound: 2.0 * lambda,
            });
        }
    }
    let mut alive = vec![true; tiles.len()];
    let mut sel = TreeSelection {
        k,
        j,
        lambda,
        greater: Default::default(),
        less: Default::default(),
        companions: Vec::new(),
        residual: Vec::new(),
        log: Vec::new(),
    };
    let tops = candidate_tops(&tiles, j);
    let three = int(3);
    let mut step = 0;
    for i_prime in (1..=3).filter(|&i| i != k) {
        let atoms = Atoms::new(&tiles, i_prime);
        let side: Vec<Direction> = tiles.iter().map(|p| side_of(p, i_prime, k)).collect();
        for dir in [Direction::Greater, Direction::Less] {
            while let Some((a, top, set)) = pick_tree(&tops, &atoms, &e, &alive, &side, dir, lambda) {
                let xi = atoms.xi(a);
                let tree = Tree {
                    i: i_prime,
                    j,
                    top: top.interval(),
                    xi: xi.clone(),
                    tiles: set.iter().map(|&t| tiles[t].clone()).collect(),
                };
                let xi_prime = lacunary_frequency(&tree, k)?;
                for &t in &set {
                    alive[t] = false;
                }
                let comp: Vec<usize> = (0..tiles.len())
                    .filter(|&t| {
                        alive[t]
                            && tiles[t].freq(k).dilate(&three).contains(&xi_prime)
                            && tiles[t].time(j).is_subset_of(&tree.top)
                    })
                    .collect();
                for &t in &comp {
                    alive[t] = false;
                }
                let companion = Tree {
                    i: k,
                    j,
                    top: tree.top.clone(),
                    xi: xi_prime.clone(),
                    tiles: comp.iter().map(|&t| tiles[t].clone()).collect(),
                };
                step += 1;
                let row = |d, xi: &Rational, n, en| TraceRow {
                    step,
                    i_prime: if d == Direction::Companion { k } else { i_prime },
                    direction: d,
                    xi: to_f64(xi),
                    top_left: top.left_f64(),
                    top_len: top.len_f64(),
                    num_tiles: n,
                    energy: en,
                };
                sel.log.push(row(dir, &xi, set.len(), exact_sum(&set, &e)));
                sel.log.push(row(Direction::Companion, &xi_prime, comp.len(), exact_sum(&comp, &e)));
                match dir {
                    Direction::Greater => sel.greater[i_prime - 1].push(tree),
                    _ => sel.less[i_prime - 1].push(tree),
                }
                sel.companions.push(companion);
            }
        }
    }
    sel.residual = tiles.iter().zip(&alive).filter(|(_, &a)| a).map(|(p, _)| p.clone()).collect();
    let re: Vec<f64> = (0..tiles.len()).filter(|&t| alive[t]).map(|t| e[t]).collect();
    for i in 1..=3 {
        let v = size_from_energies(&sel.residual, &re, i, j, k);
        if v > lambda {
            return Err(ForestError::Postcondition(format!("residual size_{{{i},{j},{k}}} = {v:e} > λ = {lambda:e}")));
        }
    }
    for i_prime in (1..=3).filter(|&i| i != k) {
        for coll in [&sel.greater[i_prime - 1], &sel.less[i_prime - 1]] {
            if !strongly_disjoint(coll, k)? {
                return Err(ForestError::Postcondition(format!("trees of type {i_prime} not {k}-strongly disjoint")));
            }
        }
    }
    Ok(sel)
}

/// Next tree for one step of the selection: the extremal atom carrying a tree
/// with `Σ e > (λ²/2)|I_T|`, then an inclusion-maximal qualifying tree there.
fn pick_tree(
    tops: &BTreeMap<Dyadic, Vec<usize>>,
    atoms: &Atoms,
    e: &[f64],
    alive: &[bool],
    side: &[Direction],
    dir: Direction,
    lambda: f64,
) -> Option<(usize, Dyadic, Vec<usize>)> {
    let keep = |t: usize| alive[t] && side[t] == dir;
    let crit = lambda * lambda / 2.0;
    let better = |a: usize, b: usize| if dir == Direction::Greater { a < b } else { a > b };
    let mut best_atom: Option<usize> = None;
    for (top, members) in tops {
        let thr = crit * top.len_f64();
        let prof = sweep(members, atoms, e, &keep);
        let order: Box<dyn Iterator<Item = &(usize, usize, f64)>> = if dir == Direction::Greater {
            Box::new(prof.iter())
        } else {
            Box::new(prof.iter().rev())
        };
        for &(lo, next, run) in order {
            // extremal atom of the run
            let a = if dir == Direction::Greater { lo } else { next - 1 };
            if a + 1 >= atoms.ends.len() || run <= thr * (1.0 - SCREEN) {
                continue;
            }
            if let Some(b) = best_atom {
                if !better(a, b) {
                    break;
                }
            }
            if exact_sum(&members_at(members, atoms, a, &keep), e) > thr {
                best_atom = Some(a);
                break;
            }
        }
    }
    let a = best_atom?;
    let mut cands: Vec<(Dyadic, Vec<usize>)> = Vec::new();
    for (top, members) in tops {
        let set = members_at(members, atoms, a, &keep);
        if !set.is_empty() && exact_sum(&set, e) > crit * top.len_f64() {
            cands.push((*top, set));
        }
    }
    let strictly_inside = |x: &[usize], y: &[usize]| x.len() < y.len() && x.iter().all(|t| y.binary_search(t).is_ok());
    let mut maximal: Vec<&(Dyadic, Vec<usize>)> = cands
        .iter()
        .filter(|(_, s)| !cands.iter().any(|(_, s2)| strictly_inside(s, s2)))
        .collect();
    maximal.sort_by(|x, y| {
        x.0.left_f64()
            .partial_cmp(&y.0.left_f64())
            .unwrap()
            .then(x.0.s.cmp(&y.0.s))
    });
    let (top, set) = maximal[0].clone();
    Some((a, top, set))
}

/// `(Σ_T |I_T|) λ² / ‖f‖₂²` for a collection that meets the weak Bessel hypotheses.
pub fn bessel_ratio(
    trees: &[Tree],
    coef: &dyn Fn(&TriTile) -> C64,
    k: usize,
    lambda: f64,
    f_norm_sq: f64,
) -> Result<f64, ForestError> {
    check_index(k)?;
    if trees.is_empty() {
        return Ok(0.0);
    }
    if !strongly_disjoint(trees, k)? {
        return Err(ForestError::Postcondition(format!("trees are not {k}-strongly disjoint")));
    }
    let mut total = 0.0;
    for t in trees {
        let top = to_f64(&t.top.length());
        let mut sum = 0.0;
        for p in &t.tiles {
            let x = coef(p).norm_sqr();
            let cap = 4.0 * lambda * lambda * 2f64.powi(p.s as i32);
            if x > cap {
                return Err(ForestError::Precondition { name: "tile energy".into(), value: x, bound: cap });
            }
            sum += x;
        }
        if sum < lambda * lambda / 2.0 * top {
            return Err(ForestError::Precondition {
                name: "tree energy deficit".into(),
                value: lambda * lambda / 2.0 * top,
                bound: sum,
            });
        }
        total += top;
    }
    Ok(total * lambda * lambda / f_norm_sq)
}

/// Grid cells where one of the maximal-function thresholds is exceeded.
#[derive(Clone, Debug, PartialEq)]
pub struct ExceptionalSet {
    pub mask: Vec<bool>,
    pub step: f64,
    pub origin: f64,
    pub measure: f64,
}

impl ExceptionalSet {
    /// Maximal runs of flagged cells as half-open intervals.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.mask.len() {
            if self.mask[k] {
                let start = k;
                while k < self.mask.len() && self.mask[k] {
                    k += 1;
                }
                out.push((self.origin + start as f64 * self.step, self.origin + k as f64 * self.step));
            } else {
                k += 1;
            }
        }
        out
    }

    pub fn is_subset_of(&self, other: &ExceptionalSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !a || *b)
    }
}

/// Centered Hardy–Littlewood maximal function of nonnegative grid data, over
/// all radii up to 16 cells and geometrically spaced radii beyond.
pub fn hardy_littlewood_grid(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut pre = vec![0.0; n + 1];
    for k in 0..n {
        pre[k + 1] = pre[k] + g[k];
    }
    let mut radii: Vec<usize> = (0..=16).collect();
    let mut r = 16.0f64;
    while (r as usize) < n {
        r *= 1.125;
        radii.push(r.ceil() as usize);
    }
    radii.dedup();
    (0..n)
        .map(|k| {
            radii
                .iter()
                .map(|&r| {
                    let lo = k.saturating_sub(r);
                    let hi = (k + r + 1).min(n);
                    (pre[hi] - pre[lo]) / (2 * r + 1) as f64
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Per-cell ratio of each maximal function to its threshold base, maximized
/// over the listed families; `F(C₀) = {ratio > C₀}`.
pub fn exceptional_ratio(
    grid: &GridSpec,
    e1: &[bool],
    e2: &[bool],
    shifts: &ShiftSequence,
    scales: RangeInclusive<i64>,
) -> Result<Vec<f64>, ForestError> {
    for m in [e1, e2] {
        if m.len() != grid.n {
            return Err(ForestError::MaskLength(m.len(), grid.n));
        }
    }
    let h = grid.step();
    let meas = |m: &[bool]| m.iter().filter(|&&b| b).count() as f64 * h;
    let (m1, m2) = (meas(e1), meas(e2));
    if m1 > m2 {
        return Err(ForestError::SetOrder(m1, m2));
    }
    let mut taus = HashMap::new();
    for s in scales.clone() {
        taus.insert(s, shifts.tau(s).ok_or(ForestError::MissingShift(s))? as f64);
    }
    // the shifted maximal function costs a factor max(1, m)
    let mfac = (shifts.m() as f64).max(1.0);
    let mut ratio = vec![0.0f64; grid.n];
    let mut fold = |vals: &[f64], base: f64| {
        if base > 0.0 {
            for (r, v) in ratio.iter_mut().zip(vals) {
                *r = r.max(v / base);
            }
        }
    };
    for (mask, q, m) in [(e1, 1.0, m1), (e2, 2.0, m2)] {
        let ind: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let hl: Vec<f64> = hardy_littlewood_grid(&ind).into_iter().map(|v| v.powf(1.0 / q)).collect();
        fold(&hl, m.powf(1.0 / q));
        for c in -2i64..=2 {
            let tau = |s: i64| c as f64 * taus[&s];
            let sm = shifted_maximal_grid(&ind, grid.q, &tau, q, scales.clone())?;
            fold(&sm, (mfac * m).powf(1.0 / q));
        }
    }
    Ok(ratio)
}

pub fn exceptional_set(
    grid: &GridSpec,
    e1: &[bool],
    e2: &[bool],
    shifts: &ShiftSequence,
    scales: RangeInclusive<i64>,
    c0: f64,
) -> Result<ExceptionalSet, ForestError> {
    let ratio = exceptional_ratio(grid, e1, e2, shifts, scales)?;
    Ok(threshold_set(grid, &ratio, c0))
}

pub fn threshold_set(grid: &GridSpec, ratio: &[f64], c0: f64) -> ExceptionalSet {
    let mask: Vec<bool> = ratio.iter().map(|&r| r > c0).collect();
    let measure = mask.iter().filter(|&&b| b).count() as f64 * grid.step();
    ExceptionalSet { mask, step: grid.step(), origin: grid.x0, measure }
}

/// Smallest `C₀` with `|{ratio > C₀}| < bound` on every supplied ratio field.
pub fn calibrate_c0(grid: &GridSpec, ratios: &[Vec<f64>], bound: f64) -> f64 {
    let h = grid.step();
    // largest admissible count of flagged cells
    let mut allowed = (bound / h).ceil() as usize;
    while allowed as f64 * h >= bound {
        allowed -= 1;
    }
    ratios
        .iter()
        .map(|r| {
            let mut v = r.clone();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v.get(allowed).copied().unwrap_or(0.0)
        })
        .fold(0.0, f64::max)
}

/// `C₀` for the default grid, `q₁ = 1`, `q₂ = 2`, and `|F| < 1/12`.
/// Produced by [`calibrate_c0`] on the ensemble in the exceptional-set tests.
pub const CALIBRATED_C0: f64 = 12.0;

/// Maximal dyadic intervals contained in a grid set. The grid origin must be a
/// multiple of the step so that cells are dyadic.
pub fn maximal_dyadic_cover(set: &ExceptionalSet) -> Result<Vec<Dyadic>, ForestError> {
    let base = set.origin / set.step;
    if base.fract() != 0.0 {
        return Err(ForestError::Misaligned(set.origin));
    }
    let s0 = set.step.log2().round() as i64;
    let mut level: Vec<Dyadic> = set
        .mask
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(k, _)| Dyadic { s: s0, n: base as i64 + k as i64 })
        .collect();
    let mut out = Vec::new();
    while !level.is_empty() {
        // a parent is inside the set iff both children are
        let mut next = Vec::new();
        let mut k = 0;
        while k < level.len() {
            let d = level[k];
            if k + 1 < level.len() && d.n.rem_euclid(2) == 0 && level[k + 1].n == d.n + 1 {
                next.push(d.parent());
                k += 2;
            } else {
                out.push(d);
                k += 1;
            }
        }
        level = next;
    }
    out.sort();
    Ok(out)
}

/// `Ẽ₃ = E₃ \ F̃` with `F̃` the union of `3J` over the maximal dyadic `J ⊂ F`.
pub fn major_subset(grid: &GridSpec, e3: &[bool], f: &ExceptionalSet) -> Result<(Vec<bool>, f64), ForestError> {
    let cover = maximal_dyadic_cover(f)?;
    let h = grid.step();
    let mut out = e3.to_vec();
    for j in &cover {
        let (l, len) = (j.left_f64(), j.len_f64());
        let lo = (((l - len) - grid.x0) / h).round().max(0.0) as usize;
        let hi = ((((l + 2.0 * len) - grid.x0) / h).round().max(0.0) as usize).min(out.len());
        for c in out.iter_mut().take(hi).skip(lo) {
            *c = false;
        }
    }
    let measure = out.iter().filter(|&&b| b).count() as f64 * h;
    Ok((out, measure))
}

/// Random sets `E₁, E₂, E₃` on the grid with `|E₁| ≤ |E₂| ≤ |E₃|` and
/// `|E₃| ∈ (1/2, 1]`, each a union of a few blocks inside `[−8, 8)`.
pub fn random_set_triple(rng: &mut impl rand::Rng, grid: &GridSpec) -> [Vec<bool>; 3] {
    let h = grid.step();
    let unit = (1.0 / h).round() as usize;
    let c3 = rng.random_range(unit / 2 + 1..=unit);
    let c2 = rng.random_range(1..=c3);
    let c1 = rng.random_range(1..=c2);
    let lo = ((-8.0 - grid.x0) / h).round().max(0.0) as usize;
    let hi = (((8.0 - grid.x0) / h).round() as usize).min(grid.n);
    [c1, c2, c3].map(|count| {
        let mut mask = vec![false; grid.n];
        let blocks = rng.random_range(1..=4usize).min(count);
        let mut left = count;
        for b in 0..blocks {
            let len = if b + 1 == blocks { left } else { rng.random_range(1..=left - (blocks - b - 1)) };
            left -= len;
            // place the block on free cells, walking right from a random start
            let mut k = rng.random_range(lo..hi);
            let mut placed = 0;
            while placed < len {
                if !mask[k] {
                    mask[k] = true;
                    placed += 1;
                }
                k = if k + 1 >= hi { lo } else { k + 1 };
            }
        }
        mask
    })
}

/// Random shift sequence for `m` on the given scales.
pub fn random_shifts(rng: &mut impl rand::Rng, m: u32, scales: RangeInclusive<i64>) -> ShiftSequence {
    let (lo, hi) = crate::dyadic::shift_bounds(m);
    let tau = scales
        .map(|s| {
            let v = rng.random_range(lo..=hi);
            (s, if rng.random_bool(0.5) { v } else { -v })
        })
        .collect();
    ShiftSequence::new(m, tau).expect("bounds respected")
}

/// Scales used by [`random_family`]: `s′ − 10` and `s′`.
pub fn family_scales(nu: NuParams) -> [i64; 2] {
    [nu.s_prime - 10, nu.s_prime]
}

/// Up to `n` random members of `P_ν` (deduplicated, sorted). Half sit at the
/// fine scale `s′ − 10` inside `[0, 4)` with `|ℓ| ≤ 6`, half at scale `s′` with
/// `|ℓ| ≤ 30`; shifts come from `shifts`, which must cover both scales.
pub fn random_family(
    rng: &mut impl rand::Rng,
    n: usize,
    nu: NuParams,
    shifts: &ShiftSequence,
) -> Result<Vec<TriTile>, ForestError> {
    let [fine, coarse] = family_scales(nu);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let (s, vv, k) = if rng.random_bool(0.5) {
            (fine, rng.random_range(0..1i64 << (2 - fine)), rng.random_range(-2..=2))
        } else {
            (coarse, rng.random_range(0..4i64 >> coarse.clamp(0, 2)), rng.random_range(-10..=10))
        };
        v.push(make_tritile(nu, shifts, s, vv, nu.alpha + 3 * k)?);
    }
    v.sort();
    v.dedup();
    Ok(v)
}

/// Deterministic pseudo-random coefficient for `(p, k)`, scaled by `|I_p|^{1/2}`
/// so that single-tile sizes are of order one at every scale.
pub fn synthetic_coefficient(seed: u64, p: &TriTile, k: usize) -> C64 {
    use rand::{Rng, SeedableRng};
    let key = seed
        ^ (p.s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (p.v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (p.l as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
        ^ (k as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(key);
    C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * 2f64.powf(p.s as f64 / 2.0)
}

/// The dyadic intervals `J` with `∫_J |f| ≥ λ|J|`, kept as the maximal ones.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedSet {
    pub lambda: f64,
    pub intervals: Vec<Dyadic>,
}

impl RefinedSet {
    /// `I ⊂ F_λ`. Dyadic intervals nest, so this means `I` lies in a maximal one.
    pub fn covers(&self, d: &Dyadic) -> bool {
        self.intervals.iter().any(|j| d.within(j))
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|d| d.len_f64()).sum()
    }
}

/// Dyadic intervals down to the grid step; `f` vanishes off the grid.
pub fn refined_square_set(f: &GridSignal, lambda: f64) -> Result<RefinedSet, ForestError> {
    let h = f.step();
    let base = f.origin() / h;
    if base.fract() != 0.0 {
        return Err(ForestError::Misaligned(f.origin()));
    }
    let q = f.q() as i64;
    let mut level: BTreeMap<i64, f64> = BTreeMap::new();
    for (k, z) in f.samples().iter().enumerate() {
        let a = z.norm();
        if a > 0.0 {
            *level.entry(base as i64 + k as i64).or_default() += a * h;
        }
    }
    let total: f64 = level.values().sum();
    let mut marked: Vec<Dyadic> = Vec::new();
    let mut s = -q;
    while !level.is_empty() && 2f64.powi(s as i32) * lambda <= total {
        let len = 2f64.powi(s as i32);
        for (&n, &mass) in &level {
            if mass >= lambda * len {
                marked.push(Dyadic { s, n });
            }
        }
        let mut up: BTreeMap<i64, f64> = BTreeMap::new();
        for (&n, &mass) in &level {
            *up.entry(n.div_euclid(2)).or_default() += mass;
        }
        level = up;
        s += 1;
    }
    let intervals: Vec<Dyadic> = marked
        .iter()
        .copied()
        .filter(|d| !marked.iter().any(|j| j != d && d.within(j)))
        .collect();
    Ok(RefinedSet { lambda, intervals })
}

/// L²-normalized Haar function of `I` on the grid of `like`, times `amp`.
pub fn haar_packet(like: &GridSignal, d: &Dyadic, amp: f64) -> GridSignal {
    let (l, len) = (d.left_f64(), d.len_f64());
    let mid = l + len / 2.0;
    let c = amp / len.sqrt();
    let vals = (0..like.len())
        .map(|k| {
            let x = like.x(k);
            let v = if x >= l && x < mid {
                c
            } else if x >= mid && x < l + len {
                -c
            } else {
                0.0
            };
            C64::new(v, 0.0)
        })
        .collect();
    like.with_samples(vals)
}

/// `Σ_{I⊂K, I⊄F_λ} |⟨f, ψ_I⟩|²` against `λ²|K|`.
pub fn refined_check(
    f: &GridSignal,
    set: &RefinedSet,
    k: &Dyadic,
    packets: &[(Dyadic, GridSignal)],
) -> (f64, f64) {
    let lhs = packets
        .iter()
        .filter(|(i, _)| i.within(k) && !set.covers(i))
        .map(|(_, psi)| f.inner(psi).norm_sqr())
        .sum();
    (lhs, set.lambda * set.lambda * k.len_f64())
}

/// Dyadic top holding `I_{p_j}` for every tile, if the tiles lie on one side of 0.
pub fn common_top(tiles: &[TriTile], j: usize) -> Option<Dyadic> {
    let ds: Vec<Dyadic> = tiles.iter().map(|p| dyadic_time(p, j)).collect();
    let first = *ds.first()?;
    if ds.iter().any(|d| (d.n < 0) != (first.n < 0)) {
        return None;
    }
    let mut s = ds.iter().map(|d| d.s).max().unwrap();
    while !ds.iter().all(|d| ancestor_at(*d, s) == ancestor_at(first, s)) {
        s += 1;
    }
    Some(ancestor_at(first, s))
}

/// `|I|` of a dyadic pair as an exact rational.
pub fn dyadic_length(d: &Dyadic) -> Rational {
    pow2(d.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::tritile_with_tau;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nu() -> NuParams {
        NuParams::new(24, -2, 0, 0).unwrap()
    }

    fn random_family(rng: &mut ChaCha8Rng, n: usize, tau: i64) -> Vec<TriTile> {
        let mut v: Vec<TriTile> = (0..n)
            .map(|_| {
                let fine = rng.random_bool(0.5);
                let (s, v, l) = if fine {
                    (-10, rng.random_range(0..4096), 3 * rng.random_range(-2..=2))
                } else {
                    (0, rng.random_range(0..4), 3 * rng.random_range(-10..=10))
                };
                tritile_with_tau(nu(), s, v, l, tau).unwrap()
            })
            .collect();
        v.sort();
        v.dedup();
        v
    }

    fn dyadic_energy(p: &TriTile) -> C64 {
        let h = (p.v * 7 + p.l * 13 + p.s * 3).rem_euclid(17) as f64;
        C64::new((h / 8.0).sqrt() * 2f64.powf(p.s as f64 / 2.0), 0.0)
    }

    #[test]
    fn singleton_sizes() {
        let p = tritile_with_tau(nu(), 0, 3, 6, 2).unwrap();
        let c = |_: &TriTile| C64::new(0.6, 0.8);
        for i in 1..=3 {
            let v = size(std::slice::from_ref(&p), &c, i, 3, 2).unwrap();
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn size_matches_brute_force_exactly_on_dyadic_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let n = rng.random_range(1..=6);
            let mut fam = Vec::new();
            while fam.len() < n {
                let s = if rng.random_bool(0.5) { 0 } else { -10 };
                let v = rng.random_range(-3..6) * if s == 0 { 1 } else { 300 };
                let l = 3 * rng.random_range(-2..=2);
                let p = tritile_with_tau(nu(), s, v, l, 1).unwrap();
                if !fam.contains(&p) {
                    fam.push(p);
                }
            }
            for i in 1..=3 {
                for j in 1..=3 {
                    let a = size(&fam, &dyadic_energy, i, j, 1).unwrap();
                    let b = size_brute_force(&fam, &dyadic_energy, i, j, 1).unwrap();
                    assert_eq!(a, b, "i={i} j={j} {fam:?}");
                }
            }
        }
    }

    #[test]
    fn two_tile_selection_by_hand() {
        // two scale-0 tiles in [0,2) with the same frequency form one tree of energy 2
        let p = tritile_with_tau(nu(), 0, 0, 0, 1).unwrap();
        let q = tritile_with_tau(nu(), 0, 1, 0, 1).unwrap();
        let c = |_: &TriTile| C64::new(1.0, 0.0);
        let fam = vec![p, q];
        // size_{i≠k} = 1 (top [0,2) gives 2/2, single tiles give 1/1); λ = 0.9
        let sel = select_trees(&fam, &c, 1, 3, 0.9).unwrap();
        assert!(sel.residual.is_empty());
        let sel_trees: Vec<&Tree> = sel.greater.iter().chain(&sel.less).flatten().collect();
        assert_eq!(sel_trees.len(), 1);
        assert_eq!(sel_trees[0].tiles.len(), 2);
        assert_eq!(sel_trees[0].top, Dyadic { s: 1, n: 0 }.interval());
        // λ large enough → nothing selected
        let sel = select_trees(&fam, &c, 1, 3, 2.0).unwrap();
        assert_eq!(sel.residual.len(), 2);
        assert!(sel.log.is_empty());
    }

    #[test]
    fn selection_postconditions_on_random_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..6 {
            let fam = random_family(&mut rng, 150, 1 + trial % 3);
            let seed: u64 = rng.random();
            let c = move |p: &TriTile| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ (p.v as u64).wrapping_mul(31) ^ ((p.l + 100) as u64) << 20 ^ (p.s + 50) as u64);
                C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * 2f64.powf(p.s as f64 / 2.0)
            };
            for k in 1..=3 {
                let lam = (1..=3).map(|i| size(&fam, &c, i, 3, k).unwrap()).fold(0.0, f64::max) / 2.0;
                let sel = select_trees(&fam, &c, k, 3, lam).unwrap();
                let mut all = sel.selected_tiles();
                all.extend(sel.residual.iter().cloned());
                all.sort();
                assert_eq!(all, fam);
                for t in sel.all_trees() {
                    assert!(is_tree(&t.tiles, t.i, t.j, &t.top, &t.xi));
                }
            }
        }
    }

    #[test]
    fn single_tree_ratios_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p0 = tritile_with_tau(nu(), 0, 0, 0, 1).unwrap();
        for _ in 0..30 {
            let tiles: Vec<TriTile> = (0..10)
                .map(|_| tritile_with_tau(nu(), -10, rng.random_range(0..2048), 0, 1).unwrap())
                .chain([p0.clone()])
                .collect();
            let top = common_top(&tiles, 3).unwrap().interval();
            let tree = Tree { i: 1, j: 3, top, xi: p0.freq(1).center(), tiles };
            let seed: u64 = rng.random();
            let mk = |salt: u64| {
                move |p: &TriTile| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed ^ salt ^ p.v as u64);
                    C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
                }
            };
            let (a, b, c) = (mk(1), mk(2), mk(3));
            let tb = single_tree_bound(&tree, [&a, &b, &c]).unwrap();
            assert!(tb.ratio <= 1.0);
        }
    }

    #[test]
    fn bessel_preconditions_are_checked() {
        let p = tritile_with_tau(nu(), 0, 0, 0, 1).unwrap();
        let tree = Tree { i: 1, j: 3, top: p.time(3).clone(), xi: p.freq(1).center(), tiles: vec![p] };
        let c = |_: &TriTile| C64::new(1.0, 0.0);
        assert_eq!(bessel_ratio(&[], &c, 2, 1.0, 1.0).unwrap(), 0.0);
        assert!(bessel_ratio(std::slice::from_ref(&tree), &c, 2, 1.0, 2.0).unwrap() == 0.5);
        assert!(matches!(bessel_ratio(std::slice::from_ref(&tree), &c, 2, 0.4, 1.0), Err(ForestError::Precondition { .. })));
        assert!(matches!(bessel_ratio(&[tree], &c, 2, 2.0, 1.0), Err(ForestError::Precondition { .. })));
    }

    #[test]
    fn empty_sets_have_empty_exceptional_set() {
        let g = GridSpec::default();
        let e = vec![false; g.n];
        let sh = ShiftSequence::constant(2, 3, -3..=5).unwrap();
        let f = exceptional_set(&g, &e, &e, &sh, -3..=5, 1.0).unwrap();
        assert_eq!(f.measure, 0.0);
        assert!(f.cells().is_empty());
    }

    #[test]
    fn exceptional_set_shrinks_with_c0() {
        let g = GridSpec::default();
        let mut e1 = vec![false; g.n];
        let mut e2 = vec![false; g.n];
        for k in 2000..2020 {
            e1[k] = true;
        }
        for k in 2100..2160 {
            e2[k] = true;
        }
        let sh = ShiftSequence::constant(1, 2, -3..=5).unwrap();
        let r = exceptional_ratio(&g, &e1, &e2, &sh, -3..=5).unwrap();
        let a = threshold_set(&g, &r, 2.0);
        let b = threshold_set(&g, &r, 4.0);
        assert!(b.is_subset_of(&a));
        assert!(b.measure <= a.measure);
        let c0 = calibrate_c0(&g, &[r.clone()], 1.0 / 12.0);
        assert!(threshold_set(&g, &r, c0).measure < 1.0 / 12.0);
    }

    #[test]
    fn refined_set_of_unit_indicator() {
        let g = GridSpec::default();
        let f = g.sample_fn(|x| C64::new(if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 }, 0.0));
        let set = refined_square_set(&f, 0.5).unwrap();
        assert_eq!(set.intervals, vec![Dyadic { s: 1, n: 0 }]);
        let zero = f.zeros_like();
        let set0 = refined_square_set(&zero, 0.5).unwrap();
        assert!(set0.intervals.is_empty());
        let k = Dyadic { s: 2, n: 0 };
        let (lhs, rhs) = refined_check(&zero, &set0, &k, &[(Dyadic { s: 0, n: 1 }, haar_packet(&zero, &Dyadic { s: 0, n: 1 }, 1.0))]);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 1.0);
    }
}
