//! Self-adjoint linearizations and their decomposition into free summands.
//!
//! Cell `(i, j)` of a linearization is an `Ñ × Ñ` element made of a scalar
//! multiple of the identity, padded deterministic matrices and random
//! symbols with scalar coefficients. The resolvent identity
//! `(b − P)^{-1} = [(Λ_0(b) − L)^{-1}]_{11}` holds with `−1` placed on the
//! staircase next to each letter.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{format_word, word_adjoint, ClassId, ModelError, ModelSpec, Monomial, RectSpace, SymbolKind};
use crate::numerics::{c64, is_exactly_hermitian, CMatrix, C64};

const ONE: C64 = c64(1.0, 0.0);
const NEG_ONE: C64 = c64(-1.0, 0.0);

/// A deterministic `Ñ × Ñ` coefficient sitting in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DetEntry {
    pub row: usize,
    pub col: usize,
    pub class: ClassId,
    pub label: String,
    /// Padded `Ñ × Ñ` matrix.
    pub matrix: CMatrix,
    /// Blocks on which rows (resp. columns) of `matrix` may be nonzero.
    pub row_blocks: BTreeSet<usize>,
    pub col_blocks: BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomKind {
    Circular,
    Semicircular,
}

/// Coefficient matrices of a random symbol `x`: `L ∋ plain ⊗ x + adjoint ⊗ x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCoeff {
    pub symbol: String,
    pub kind: RandomKind,
    pub block: usize,
    pub class: ClassId,
    pub plain: CMatrix,
    pub adjoint: CMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub size: usize,
    pub dim: usize,
    /// `constant[(i, j)] · I_Ñ` in every cell.
    pub constant: CMatrix,
    pub deterministic: Vec<DetEntry>,
    pub random: Vec<RandomCoeff>,
}

#[derive(Debug, Clone)]
enum Letter {
    Scalar(C64),
    Det {
        matrix: CMatrix,
        row_block: usize,
        col_block: usize,
        class: ClassId,
        label: String,
    },
    Rand {
        symbol: String,
        kind: RandomKind,
        block: usize,
        class: ClassId,
        adjoint: bool,
        coeff: C64,
    },
}

impl Letter {
    fn adjoint(&self) -> Letter {
        match self {
            Letter::Scalar(z) => Letter::Scalar(z.conj()),
            Letter::Det {
                matrix,
                row_block,
                col_block,
                class,
                label,
            } => Letter::Det {
                matrix: matrix.adjoint(),
                row_block: *col_block,
                col_block: *row_block,
                class: *class,
                label: format!("({label})'"),
            },
            Letter::Rand {
                symbol,
                kind,
                block,
                class,
                adjoint,
                coeff,
            } => Letter::Rand {
                symbol: symbol.clone(),
                kind: *kind,
                block: *block,
                class: *class,
                adjoint: match kind {
                    RandomKind::Semicircular => false,
                    RandomKind::Circular => !adjoint,
                },
                coeff: coeff.conj(),
            },
        }
    }

    fn scaled(self, g: C64) -> Letter {
        match self {
            Letter::Scalar(z) => Letter::Scalar(z * g),
            Letter::Det {
                matrix,
                row_block,
                col_block,
                class,
                label,
            } => Letter::Det {
                matrix: matrix * g,
                row_block,
                col_block,
                class,
                label,
            },
            Letter::Rand {
                symbol,
                kind,
                block,
                class,
                adjoint,
                coeff,
            } => Letter::Rand {
                symbol,
                kind,
                block,
                class,
                adjoint,
                coeff: coeff * g,
            },
        }
    }

    fn blocks(&self) -> Option<(usize, usize)> {
        match self {
            Letter::Scalar(_) => None,
            Letter::Det {
                row_block, col_block, ..
            } => Some((*row_block, *col_block)),
            Letter::Rand { block, .. } => Some((*block, *block)),
        }
    }
}

fn letters_of(spec: &ModelSpec, mono: &Monomial) -> Result<Vec<Letter>, ModelError> {
    mono.word
        .iter()
        .map(|f| {
            let sym = spec
                .symbol(&f.symbol)
                .ok_or_else(|| ModelError::UnknownSymbol(f.symbol.clone()))?;
            let rand = |kind, block| Letter::Rand {
                symbol: sym.name.clone(),
                kind,
                block,
                class: sym.class_id,
                adjoint: f.adjoint,
                coeff: ONE,
            };
            Ok(match &sym.kind {
                SymbolKind::Deterministic {
                    matrix,
                    row_block,
                    col_block,
                } => {
                    let (matrix, r, c) = if f.adjoint {
                        (matrix.adjoint(), *col_block, *row_block)
                    } else {
                        (matrix.clone(), *row_block, *col_block)
                    };
                    Letter::Det {
                        matrix,
                        row_block: r,
                        col_block: c,
                        class: sym.class_id,
                        label: f.to_string(),
                    }
                }
                SymbolKind::Circular { block } => rand(RandomKind::Circular, *block),
                SymbolKind::Semicircular { block } => rand(RandomKind::Semicircular, *block),
                SymbolKind::HaarUnitary { .. } => {
                    return Err(ModelError::UnsupportedHaarUsage {
                        word: format_word(&mono.word),
                        detail: "Haar unitaries must be eliminated before linearizing".into(),
                    })
                }
            })
        })
        .collect()
}

/// Multiplies out maximal runs of deterministic letters of one class.
fn merge_runs(letters: Vec<Letter>) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::with_capacity(letters.len());
    for l in letters {
        if let (
            Some(Letter::Det {
                matrix: acc,
                col_block: acc_col,
                class: acc_class,
                label: acc_label,
                ..
            }),
            Letter::Det {
                matrix,
                col_block,
                class,
                label,
                ..
            },
        ) = (out.last_mut(), &l)
        {
            if acc_class == class {
                *acc = &*acc * matrix;
                *acc_col = *col_block;
                acc_label.push('*');
                acc_label.push_str(label);
                continue;
            }
        }
        out.push(l);
    }
    out
}

fn symmetrize_center(letter: Letter) -> Letter {
    match letter {
        Letter::Det {
            matrix,
            row_block,
            col_block,
            class,
            label,
        } => {
            let sym = (&matrix + matrix.adjoint()) * c64(0.5, 0.0);
            Letter::Det {
                matrix: sym,
                row_block,
                col_block,
                class,
                label,
            }
        }
        other => other,
    }
}

struct Builder<'a> {
    space: &'a RectSpace,
    size: usize,
    constant: BTreeMap<(usize, usize), C64>,
    det: BTreeMap<(usize, usize, ClassId), DetEntry>,
    random: BTreeMap<(ClassId, String), RandomCoeff>,
    random_cells: Vec<(String, ClassId, RandomKind, usize, usize, usize, bool, C64)>,
}

impl<'a> Builder<'a> {
    fn new(space: &'a RectSpace) -> Self {
        Builder {
            space,
            size: 1,
            constant: BTreeMap::new(),
            det: BTreeMap::new(),
            random: BTreeMap::new(),
            random_cells: Vec::new(),
        }
    }

    fn grow(&mut self, extra: usize) -> usize {
        let start = self.size;
        self.size += extra;
        start
    }

    fn place(&mut self, row: usize, col: usize, letter: &Letter) {
        match letter {
            Letter::Scalar(z) => *self.constant.entry((row, col)).or_default() += z,
            Letter::Det {
                matrix,
                row_block,
                col_block,
                class,
                label,
            } => {
                let padded = self.space.pad(matrix, *row_block, *col_block);
                match self.det.get_mut(&(row, col, *class)) {
                    Some(e) => {
                        e.matrix += padded;
                        e.label.push_str(" + ");
                        e.label.push_str(label);
                        e.row_blocks.insert(*row_block);
                        e.col_blocks.insert(*col_block);
                    }
                    None => {
                        self.det.insert(
                            (row, col, *class),
                            DetEntry {
                                row,
                                col,
                                class: *class,
                                label: label.clone(),
                                matrix: padded,
                                row_blocks: [*row_block].into(),
                                col_blocks: [*col_block].into(),
                            },
                        );
                    }
                }
            }
            Letter::Rand {
                symbol,
                kind,
                block,
                class,
                adjoint,
                coeff,
            } => self.random_cells.push((
                symbol.clone(),
                *class,
                *kind,
                *block,
                row,
                col,
                *adjoint,
                *coeff,
            )),
        }
    }

    /// Staircase of `letters` with local index 0 mapped to `map(0)`.
    fn staircase(&mut self, letters: &[Letter], map: &dyn Fn(usize) -> usize) {
        let k = letters.len();
        for (i, l) in letters.iter().enumerate() {
            self.place(map(i), map(k - 1 - i), l);
            if i >= 1 {
                self.place(map(i), map(k - i), &Letter::Scalar(NEG_ONE));
            }
        }
    }

    fn finish(mut self) -> Linearization {
        let m = self.size;
        let mut constant = CMatrix::zeros(m, m);
        for ((r, c), z) in &self.constant {
            constant[(*r, *c)] += z;
        }
        for (symbol, class, kind, block, r, c, adjoint, coeff) in std::mem::take(&mut self.random_cells) {
            let e = self.random.entry((class, symbol.clone())).or_insert_with(|| RandomCoeff {
                symbol,
                kind,
                block,
                class,
                plain: CMatrix::zeros(m, m),
                adjoint: CMatrix::zeros(m, m),
            });
            if adjoint {
                e.adjoint[(r, c)] += coeff;
            } else {
                e.plain[(r, c)] += coeff;
            }
        }
        Linearization {
            size: m,
            dim: self.space.total_dim(),
            constant,
            deterministic: self.det.into_values().collect(),
            random: self.random.into_values().collect(),
        }
    }
}

/// Staircase linearization of `γ x_1 ⋯ x_k` over the letters `[γ, x_1, …, x_k]`
/// (size `k + 1`, not self-adjoint in general).
pub fn linearize_monomial(spec: &ModelSpec, mono: &Monomial) -> Result<Linearization, ModelError> {
    let mut letters = vec![Letter::Scalar(mono.coeff)];
    letters.extend(letters_of(spec, mono)?);
    let mut b = Builder::new(&spec.space);
    b.grow(letters.len() - 1);
    b.staircase(&letters, &|i| i);
    Ok(b.finish())
}

struct Palindrome {
    letters: Vec<Letter>,
}

fn can_fuse(a: &[Letter], b: &[Letter]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let incompatible = |x: &Letter, y: &Letter| match (x.blocks(), y.blocks()) {
        (Some((_, c)), Some((r, _))) => c != r,
        _ => false,
    };
    (0..a.len() - 1).all(|p| incompatible(&a[p], &b[p + 1]) && incompatible(&b[p], &a[p + 1]))
}

/// Builds a self-adjoint linearization of the (validated, Haar-free) polynomial.
///
/// Deterministic runs of one class are multiplied out first. Palindromic
/// words `a_1 ⋯ a_j h a_j* ⋯ a_1*` become self-adjoint staircases of size
/// `2j + 1`; palindromes of equal length whose mixed products vanish
/// blockwise share one staircase. Remaining words are paired with their
/// adjoints and symmetrized as `[[0, u, v*], [u*, 0, Q*], [v, Q, 0]]`.
pub fn linearize(spec: &ModelSpec) -> Result<Linearization, ModelError> {
    if spec.has_haar() {
        return Err(ModelError::UnsupportedHaarUsage {
            word: spec.polynomial.to_string(),
            detail: "Haar unitaries must be eliminated before linearizing".into(),
        });
    }
    let checked = crate::model::validate(spec)?;
    let poly = &checked.polynomial;

    let mut b = Builder::new(&spec.space);
    let mut palindromes: Vec<Palindrome> = Vec::new();
    let mut pairs: Vec<Vec<Letter>> = Vec::new();
    let mut seen = BTreeSet::new();

    for (idx, mono) in poly.monomials.iter().enumerate() {
        if seen.contains(&idx) {
            continue;
        }
        let adj = word_adjoint(&mono.word);
        let adj_normal: Vec<_> = adj
            .into_iter()
            .map(|mut f| {
                if checked.symbol(&f.symbol).is_some_and(|s| s.is_self_adjoint()) {
                    f.adjoint = false;
                }
                f
            })
            .collect();
        let merged = merge_runs(letters_of(&checked, mono)?);
        if adj_normal == mono.word {
            // palindromic word, real coefficient
            let gamma = c64(mono.coeff.re, 0.0);
            let half = merged.len() / 2;
            let mut letters: Vec<Letter> = merged[..half].to_vec();
            let center = if merged.len() % 2 == 1 {
                symmetrize_center(merged[half].clone().scaled(gamma))
            } else {
                Letter::Scalar(gamma)
            };
            letters.push(center);
            for l in merged[..half].iter().rev() {
                letters.push(l.adjoint());
            }
            if letters.len() == 1 {
                b.place(0, 0, &letters[0]);
            } else {
                palindromes.push(Palindrome { letters });
            }
        } else {
            let partner = poly.monomials.iter().position(|m| m.word == adj_normal);
            match partner {
                Some(p) if poly.monomials[p].coeff == mono.coeff.conj() => {
                    seen.insert(p);
                }
                _ => {
                    return Err(ModelError::NotSelfAdjoint {
                        word: format_word(&mono.word),
                    })
                }
            }
            let mut letters = merged;
            let first = letters.remove(0).scaled(mono.coeff);
            letters.insert(0, first);
            if letters.len() == 1 {
                match &letters[0] {
                    Letter::Det { matrix, .. } => {
                        // add l + l* as one exactly Hermitian matrix
                        let herm = matrix + matrix.adjoint();
                        let mut l = letters[0].clone();
                        if let Letter::Det { matrix, .. } = &mut l {
                            *matrix = herm;
                        }
                        b.place(0, 0, &l);
                    }
                    l => {
                        b.place(0, 0, l);
                        b.place(0, 0, &l.adjoint());
                    }
                }
            } else {
                pairs.push(letters);
            }
        }
    }

    // fuse palindromes
    let mut groups: Vec<Vec<Palindrome>> = Vec::new();
    for p in palindromes {
        let fusable = !matches!(p.letters[p.letters.len() / 2], Letter::Scalar(_));
        let slot = groups.iter().position(|g| {
            fusable
                && !matches!(g[0].letters[g[0].letters.len() / 2], Letter::Scalar(_))
                && g.iter().all(|q| can_fuse(&q.letters, &p.letters))
        });
        match slot {
            Some(i) => groups[i].push(p),
            None => groups.push(vec![p]),
        }
    }
    for g in &groups {
        let k = g[0].letters.len();
        let start = b.grow(k - 1);
        let map = move |i: usize| if i == 0 { 0 } else { start + i - 1 };
        let mut placed_ones = false;
        for p in g {
            for (i, l) in p.letters.iter().enumerate() {
                b.place(map(i), map(k - 1 - i), l);
                if i >= 1 && !placed_ones {
                    b.place(map(i), map(k - i), &Letter::Scalar(NEG_ONE));
                }
            }
            placed_ones = true;
        }
    }

    // symmetrized sum of the non-palindromic halves
    let d: usize = pairs.iter().map(|p| p.len() - 1).sum();
    if d > 0 {
        let a0 = b.grow(d);
        let b0 = b.grow(d);
        let mut offset = 0;
        for letters in &pairs {
            let k = letters.len();
            let q = |i: usize| offset + i - 1;
            let mut put = |r: usize, c: usize, l: &Letter| match (r, c) {
                (0, 0) => unreachable!("staircase never touches the corner for k ≥ 2"),
                (0, c) => {
                    b.place(0, a0 + q(c), l);
                    b.place(a0 + q(c), 0, &l.adjoint());
                }
                (r, 0) => {
                    b.place(b0 + q(r), 0, l);
                    b.place(0, b0 + q(r), &l.adjoint());
                }
                (r, c) => {
                    b.place(b0 + q(r), a0 + q(c), l);
                    b.place(a0 + q(c), b0 + q(r), &l.adjoint());
                }
            };
            for (i, l) in letters.iter().enumerate() {
                put(i, k - 1 - i, l);
                if i >= 1 {
                    put(i, k - i, &Letter::Scalar(NEG_ONE));
                }
            }
            offset += k - 1;
        }
    }

    let lin = b.finish();
    if !lin.is_self_adjoint() {
        return Err(ModelError::NotSelfAdjoint {
            word: poly.to_string(),
        });
    }
    Ok(lin)
}

impl Linearization {
    /// Constants and deterministic entries as an `mÑ × mÑ` matrix
    /// (cell-major: index `i·Ñ + ñ`).
    pub fn dense_deterministic(&self) -> CMatrix {
        dense(self.size, self.dim, &self.constant, &self.deterministic)
    }

    /// Formal self-adjointness: Hermitian deterministic part and
    /// `adjoint = plain*` for every circular symbol.
    pub fn is_self_adjoint(&self) -> bool {
        if !is_exactly_hermitian(&self.constant) {
            return false;
        }
        for e in &self.deterministic {
            let mirror = self
                .deterministic
                .iter()
                .find(|f| f.row == e.col && f.col == e.row && f.class == e.class);
            match mirror {
                Some(f) if f.matrix == e.matrix.adjoint() => {}
                _ => return false,
            }
        }
        self.random.iter().all(|r| match r.kind {
            RandomKind::Semicircular => {
                r.adjoint.iter().all(|z| *z == C64::default()) && is_exactly_hermitian(&r.plain)
            }
            RandomKind::Circular => r.adjoint == r.plain.adjoint(),
        })
    }

    pub fn num_minus_ones(&self) -> usize {
        self.constant.iter().filter(|z| **z == NEG_ONE).count()
    }
}

fn dense(m: usize, n: usize, constant: &CMatrix, entries: &[DetEntry]) -> CMatrix {
    let mut out = CMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..m {
            let z = constant[(i, j)];
            if z != C64::default() {
                for t in 0..n {
                    out[(i * n + t, j * n + t)] += z;
                }
            }
        }
    }
    for e in entries {
        let mut view = out.view_mut((e.row * n, e.col * n), (n, n));
        view += &e.matrix;
    }
    out
}

/// Deterministic free summand: an `m × m` array of `Ñ × Ñ` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DetPart {
    pub size: usize,
    pub dim: usize,
    pub constant: CMatrix,
    pub entries: Vec<DetEntry>,
}

impl DetPart {
    pub fn dense(&self) -> CMatrix {
        dense(self.size, self.dim, &self.constant, &self.entries)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty() && self.constant.iter().all(|z| *z == C64::default())
    }
}

/// `scale · coeff ⊗ s` for a standard semicircular `s` on `block`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiPart {
    pub coeff: CMatrix,
    pub block: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SummandKind {
    Det(DetPart),
    Semi(SemiPart),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeSummand {
    pub class_id: ClassId,
    pub kind: SummandKind,
    pub provenance: String,
}

/// Splits `L` into free summands: one deterministic part for class 0 with
/// all constants, one per group of rotated classes with disjoint block
/// supports, one semicircular part per semicircular symbol and two per
/// circular symbol `c = (s_1 + i s_2)/√2`.
pub fn split_classes(lin: &Linearization) -> Vec<FreeSummand> {
    let m = lin.size;
    let mut out = Vec::new();

    let ambient: Vec<DetEntry> = lin
        .deterministic
        .iter()
        .filter(|e| e.class == ClassId::AMBIENT)
        .cloned()
        .collect();
    let base = DetPart {
        size: m,
        dim: lin.dim,
        constant: lin.constant.clone(),
        entries: ambient,
    };
    if !base.is_zero() {
        out.push(FreeSummand {
            class_id: ClassId::AMBIENT,
            provenance: provenance(&base.entries, "constants"),
            kind: SummandKind::Det(base),
        });
    }

    let mut by_class: BTreeMap<ClassId, Vec<DetEntry>> = BTreeMap::new();
    for e in lin.deterministic.iter().filter(|e| e.class != ClassId::AMBIENT) {
        by_class.entry(e.class).or_default().push(e.clone());
    }
    let mut groups: Vec<(ClassId, BTreeSet<usize>, Vec<DetEntry>)> = Vec::new();
    for (class, entries) in by_class {
        let support: BTreeSet<usize> = entries
            .iter()
            .flat_map(|e| e.row_blocks.iter().chain(&e.col_blocks).copied())
            .collect();
        match groups.iter_mut().find(|g| g.1.is_disjoint(&support)) {
            Some(g) => {
                g.1.extend(support);
                g.2.extend(entries);
            }
            None => groups.push((class, support, entries)),
        }
    }
    for (class, _, entries) in groups {
        out.push(FreeSummand {
            class_id: class,
            provenance: provenance(&entries, ""),
            kind: SummandKind::Det(DetPart {
                size: m,
                dim: lin.dim,
                constant: CMatrix::zeros(m, m),
                entries,
            }),
        });
    }

    for r in &lin.random {
        match r.kind {
            RandomKind::Semicircular => out.push(FreeSummand {
                class_id: r.class,
                provenance: r.symbol.clone(),
                kind: SummandKind::Semi(SemiPart {
                    coeff: &r.plain + &r.adjoint,
                    block: r.block,
                    scale: 1.0,
                }),
            }),
            RandomKind::Circular => {
                let e = &r.plain;
                let f = &r.adjoint;
                let i = c64(0.0, 1.0);
                out.push(FreeSummand {
                    class_id: r.class,
                    provenance: format!("{} (real part)", r.symbol),
                    kind: SummandKind::Semi(SemiPart {
                        coeff: e + f,
                        block: r.block,
                        scale: std::f64::consts::FRAC_1_SQRT_2,
                    }),
                });
                out.push(FreeSummand {
                    class_id: r.class,
                    provenance: format!("{} (imaginary part)", r.symbol),
                    kind: SummandKind::Semi(SemiPart {
                        coeff: (e - f) * i,
                        block: r.block,
                        scale: std::f64::consts::FRAC_1_SQRT_2,
                    }),
                });
            }
        }
    }
    out
}

fn provenance(entries: &[DetEntry], extra: &str) -> String {
    let mut labels: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
    labels.dedup();
    if !extra.is_empty() {
        labels.push(extra.to_string());
    }
    labels.join(", ")
}
