//! Batch selection: scalar and vectorized objectives, dominance ranking and
//! the selection strategies.
//!
//! Every strategy starts from the same per-round scores. θ is redrawn for
//! every item, the gain ratio `b` is formed, and from it
//! `div_i = b_i·diss_i`, `rel_i = b_i·sim_i` and the k-DPP probabilities
//! `π_div`, `π_rel` over the Gram matrices of the diversity matrix `D` and
//! the relevance matrix `R`. The strategy then decides how to rank.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::Arms;
use crate::dataio::{EmbeddingSet, RowView};
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one count as zero in the
/// k-DPP step.
pub const KDPP_RELATIVE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Vectorized multi-objective: dominance over `(π_div, π_rel)`.
    VMo,
    /// Multi-objective: dominance over `(div, rel)`.
    MO,
    /// Aggregation: top-K by the aggregate score.
    Lin,
    /// Single objective: top-K by `rel`.
    SO,
    /// Vectorized mono-objective: top-K by `π_div`.
    VMN,
    /// Uncertainty only: top-K by θ.
    Unc,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::VMo,
        StrategyKind::MO,
        StrategyKind::Lin,
        StrategyKind::SO,
        StrategyKind::VMN,
        StrategyKind::Unc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::VMo => "VMo",
            StrategyKind::MO => "MO",
            StrategyKind::Lin => "Lin",
            StrategyKind::SO => "SO",
            StrategyKind::VMN => "VMN",
            StrategyKind::Unc => "Unc",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                let names: Vec<_> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
                Error::param(format!(
                    "unknown strategy {s:?}; valid strategies: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Scoring used by [`StrategyKind::Lin`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinVariant {
    /// `b (1 + div − rel)`.
    #[default]
    Aggregate,
    /// `b (diss + sim)`.
    LinSum,
}

impl FromStr for LinVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aggregate" => Ok(LinVariant::Aggregate),
            "lin-sum" | "linsum" => Ok(LinVariant::LinSum),
            other => Err(Error::param(format!(
                "unknown Lin variant {other:?} (expected aggregate or lin-sum)"
            ))),
        }
    }
}

/// `φ_iᵀψ_u`.
pub fn similarity_to_user(item: RowView<'_>, user: RowView<'_>) -> f64 {
    item.dot(&user)
}

/// `−(1/|H|) Σ_c φ_iᵀφ_c` over the rows of `history`; 0 for an empty history.
pub fn dissimilarity_to_context(item: RowView<'_>, history: &DMatrix<f64>) -> f64 {
    if history.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = history.row_iter().map(|c| item.dot(&c)).sum();
    -total / history.nrows() as f64
}

/// `b (1 + div − rel)`.
pub fn aggregate_score(b: f64, div: f64, rel: f64) -> f64 {
    b * (1.0 + div - rel)
}

/// Both objectives maximized: `a` is at least as good in one and strictly
/// better in the other.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 >= b.0 && a.1 > b.1) || (a.0 > b.0 && a.1 >= b.1)
}

/// Front index per item, 0 for the non-dominated set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParetoRanking {
    pub rank: Vec<usize>,
}

impl ParetoRanking {
    pub fn fronts(&self) -> Vec<Vec<usize>> {
        let depth = self.rank.iter().copied().max().map_or(0, |m| m + 1);
        let mut fronts = vec![Vec::new(); depth];
        for (i, &r) in self.rank.iter().enumerate() {
            fronts[r].push(i);
        }
        fronts
    }
}

/// Fast non-dominated sorting with domination counts.
pub fn nondominated_sort(points: &[(f64, f64)]) -> ParetoRanking {
    let n = points.len();
    let mut dominated_by_count = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(points[i], points[j]) {
                dominates_list[i].push(j);
                dominated_by_count[j] += 1;
            } else if dominates(points[j], points[i]) {
                dominates_list[j].push(i);
                dominated_by_count[i] += 1;
            }
        }
    }
    let mut rank = vec![0usize; n];
    let mut front: Vec<usize> = (0..n).filter(|&i| dominated_by_count[i] == 0).collect();
    let mut level = 0;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &p in &front {
            rank[p] = level;
            for &q in &dominates_list[p] {
                dominated_by_count[q] -= 1;
                if dominated_by_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        front = next;
        level += 1;
    }
    ParetoRanking { rank }
}

/// Takes `k` items front by front; inside a front by descending `tie_key`,
/// then ascending index.
pub fn dominance_batch_fill(ranking: &ParetoRanking, tie_key: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ranking.rank.len()).collect();
    order.sort_by(|&a, &b| {
        ranking.rank[a]
            .cmp(&ranking.rank[b])
            .then_with(|| tie_key[b].total_cmp(&tie_key[a]))
            .then_with(|| a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Indices of the `k` largest scores, ties by ascending index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| a.cmp(&b)));
    order.truncate(k);
    order
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::param(format!("k must lie in 1..={n}, got {k}")));
    }
    Ok(())
}

/// Eigenpairs sorted by descending eigenvalue (stable in the original
/// order), clipped at zero and cut below the relative threshold.
fn kdpp_from_eigen<R: Rng + ?Sized>(
    n: usize,
    pairs: Vec<(f64, DVector<f64>)>,
    k: usize,
    rng: &mut R,
) -> Vec<f64> {
    let lambda_max = pairs.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if !(lambda_max > 0.0) {
        return vec![1.0 / n as f64; n];
    }
    let cutoff = lambda_max * KDPP_RELATIVE_CUTOFF;
    let mut p: Vec<f64> = pairs
        .iter()
        .map(|(l, _)| if *l > cutoff { l / (1.0 + l) } else { 0.0 })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);

    let chosen = sample_without_replacement(&p, k, rng);
    let mut pi = vec![0.0; n];
    for &s in &chosen {
        for (j, v) in pairs[s].1.iter().enumerate() {
            pi[j] += v * v;
        }
    }
    let total: f64 = pi.iter().sum();
    if !(total > 0.0) {
        return vec![1.0 / n as f64; n];
    }
    pi.iter_mut().for_each(|x| *x /= total);
    pi
}

/// Sequential weighted draws without replacement. Stops early once the
/// remaining mass is zero.
fn sample_without_replacement<R: Rng + ?Sized>(p: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut weights = p.to_vec();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let i = pick.expect("positive mass has a positive entry");
        chosen.push(i);
        weights[i] = 0.0;
    }
    chosen
}

fn sorted_pairs(eig: SymmetricEigen<f64, nalgebra::Dyn>) -> Vec<(f64, DVector<f64>)> {
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l.max(0.0), eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Item diversification probabilities from a square kernel `L`.
///
/// Symmetrize, eigendecompose, clip eigenvalues at zero, weight them by
/// `λ/(1+λ)`, draw `k` eigenvectors without replacement and sum the squared
/// rows of the chosen eigenvectors. Fewer than `k` are drawn when `L` has
/// fewer nonzero eigenvalues; an all-zero spectrum gives uniform `π`.
pub fn kdpp_probabilities<R: Rng + ?Sized>(
    kernel: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !kernel.is_square() {
        return Err(Error::NotSquare {
            rows: kernel.nrows(),
            cols: kernel.ncols(),
        });
    }
    let n = kernel.nrows();
    check_k(k, n)?;
    let sym = (kernel + kernel.transpose()) * 0.5;
    let pairs = sorted_pairs(SymmetricEigen::new(sym));
    Ok(kdpp_from_eigen(n, pairs, k, rng))
}

/// Same as [`kdpp_probabilities`] for `L = F Fᵀ`, working on the small
/// `FᵀF` instead of the `n × n` kernel.
pub fn kdpp_probabilities_factored<R: Rng + ?Sized>(
    factor: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = factor.nrows();
    check_k(k, n)?;
    let small = factor.transpose() * factor;
    let eig = SymmetricEigen::new(small);
    let pairs = sorted_pairs(eig)
        .into_iter()
        .map(|(mu, u)| {
            if mu > 0.0 {
                let v = factor * u / mu.sqrt();
                (mu, v)
            } else {
                (0.0, DVector::zeros(n))
            }
        })
        .collect();
    Ok(kdpp_from_eigen(n, pairs, k, rng))
}

fn weighted_items(items: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    if b.len() != items.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for {} items",
            b.len(),
            items.nrows()
        )));
    }
    let mut out = items.clone();
    for (mut row, &w) in out.row_iter_mut().zip(b) {
        row *= w;
    }
    Ok(out)
}

/// `D = C (diag(b) E)ᵀ`, `|H| × n`. An empty context becomes one zero row.
pub fn build_diversity_matrix(
    context: &DMatrix<f64>,
    items: &DMatrix<f64>,
    b: &[f64],
) -> Result<DMatrix<f64>> {
    if context.nrows() > 0 && context.ncols() != items.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "context rank {} vs item rank {}",
            context.ncols(),
            items.ncols()
        )));
    }
    let weighted = weighted_items(items, b)?;
    if context.nrows() == 0 {
        return Ok(DMatrix::zeros(1, items.nrows()));
    }
    Ok(context * weighted.transpose())
}

/// `R = (diag(b) E) ⊙ ψ_u`, `n × d`.
pub fn build_relevance_matrix(
    items: &DMatrix<f64>,
    b: &[f64],
    user: RowView<'_>,
) -> Result<DMatrix<f64>> {
    if user.len() != items.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "user rank {} vs item rank {}",
            user.len(),
            items.ncols()
        )));
    }
    let mut out = weighted_items(items, b)?;
    for mut row in out.row_iter_mut() {
        row.component_mul_assign(&user);
    }
    Ok(out)
}

/// The user's history as an ordered multiset of items, with the running
/// sums the selection step needs.
#[derive(Debug, Clone)]
pub struct History {
    items: Vec<usize>,
    sum: RowDVector<f64>,
    gram: DMatrix<f64>,
}

impl History {
    pub fn new(rank: usize) -> Self {
        Self {
            items: Vec::new(),
            sum: RowDVector::zeros(rank),
            gram: DMatrix::zeros(rank, rank),
        }
    }

    pub fn push(&mut self, item: usize, embeddings: &EmbeddingSet) {
        let row = embeddings.item(item);
        self.sum += row;
        self.gram += row.transpose() * row;
        self.items.push(item);
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Context matrix `C` with one embedding row per history entry.
    pub fn context_matrix(&self, embeddings: &EmbeddingSet) -> DMatrix<f64> {
        embeddings.items().select_rows(&self.items)
    }

    /// `CᵀC`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

/// Everything computed for one selection step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionScores {
    pub theta: Vec<f64>,
    pub b: Vec<f64>,
    pub sim: Vec<f64>,
    pub diss: Vec<f64>,
    pub div: Vec<f64>,
    pub rel: Vec<f64>,
    pub agg: Vec<f64>,
    pub pi_div: Vec<f64>,
    pub pi_rel: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub batch: Vec<usize>,
    pub scores: SelectionScores,
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Draws θ for every arm and scores all items without choosing a batch.
pub fn compute_scores<R: Rng + ?Sized>(
    k: usize,
    arms: &mut Arms,
    history: &History,
    embeddings: &EmbeddingSet,
    user: usize,
    lin_variant: LinVariant,
    rng: &mut R,
) -> Result<SelectionScores> {
    let n = embeddings.n_items();
    check_k(k, n)?;
    embeddings.check_user(user)?;
    if arms.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} arms for {n} items",
            arms.len()
        )));
    }
    let theta = arms.sample_all(rng);
    let b = arms.gains();

    let items = embeddings.items();
    let psi = embeddings.user(user);
    let sim: Vec<f64> = (items * psi.transpose()).iter().copied().collect();
    let diss: Vec<f64> = if history.is_empty() {
        vec![0.0; n]
    } else {
        let mean = history.sum.transpose() / history.len() as f64;
        (items * mean).iter().map(|x| -x).collect()
    };
    let div: Vec<f64> = b.iter().zip(&diss).map(|(b, d)| b * d).collect();
    let rel: Vec<f64> = b.iter().zip(&sim).map(|(b, s)| b * s).collect();
    let agg: Vec<f64> = (0..n)
        .map(|i| match lin_variant {
            LinVariant::Aggregate => aggregate_score(b[i], div[i], rel[i]),
            LinVariant::LinSum => b[i] * (diss[i] + sim[i]),
        })
        .collect();

    // DᵀD = Ẽ (CᵀC) Ẽᵀ = (Ẽ G^{1/2})(Ẽ G^{1/2})ᵀ
    let weighted = weighted_items(items, &b)?;
    let div_factor = if history.is_empty() {
        DMatrix::zeros(n, embeddings.rank())
    } else {
        &weighted * psd_sqrt(history.gram())
    };
    let pi_div = kdpp_probabilities_factored(&div_factor, k, rng)?;
    let rel_matrix = build_relevance_matrix(items, &b, psi)?;
    let pi_rel = kdpp_probabilities_factored(&rel_matrix, k, rng)?;

    Ok(SelectionScores {
        theta,
        b,
        sim,
        diss,
        div,
        rel,
        agg,
        pi_div,
        pi_rel,
    })
}

/// Ranks already-computed scores under a strategy.
pub fn rank_scores(strategy: StrategyKind, scores: &SelectionScores, k: usize) -> Vec<usize> {
    let pairs = |a: &[f64], b: &[f64]| -> (Vec<(f64, f64)>, Vec<f64>) {
        (
            a.iter().copied().zip(b.iter().copied()).collect(),
            a.iter().zip(b).map(|(x, y)| x + y).collect(),
        )
    };
    match strategy {
        StrategyKind::VMo => {
            let (pts, tie) = pairs(&scores.pi_div, &scores.pi_rel);
            dominance_batch_fill(&nondominated_sort(&pts), &tie, k)
        }
        StrategyKind::MO => {
            let (pts, tie) = pairs(&scores.div, &scores.rel);
            dominance_batch_fill(&nondominated_sort(&pts), &tie, k)
        }
        StrategyKind::Lin => top_k(&scores.agg, k),
        StrategyKind::SO => top_k(&scores.rel, k),
        StrategyKind::VMN => top_k(&scores.pi_div, k),
        StrategyKind::Unc => top_k(&scores.theta, k),
    }
}

/// One round of batch selection: `k` distinct items.
#[allow(clippy::too_many_arguments)]
pub fn select_batch<R: Rng + ?Sized>(
    strategy: StrategyKind,
    k: usize,
    arms: &mut Arms,
    history: &History,
    embeddings: &EmbeddingSet,
    user: usize,
    lin_variant: LinVariant,
    rng: &mut R,
) -> Result<Selection> {
    let scores = compute_scores(k, arms, history, embeddings, user, lin_variant, rng)?;
    let batch = rank_scores(strategy, &scores, k);
    Ok(Selection { batch, scores })
}
