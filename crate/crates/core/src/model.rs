//! Rectangular block spaces, symbols and non-commutative polynomials.
//!
//! A model lives on `C^Ñ = C^{n_0} ⊕ … ⊕ C^{n_k}`; every symbol maps one
//! block into another. Deterministic symbols carry their matrices, random
//! symbols (circular, semicircular, Haar unitary) are square on one block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::numerics::{is_exactly_hermitian, CMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid block structure: {0}")]
    InvalidSpace(String),
    #[error("symbol `{name}`: {detail}")]
    BadSymbol { name: String, detail: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("block mismatch in monomial `{word}`: {detail}")]
    BlockMismatch { word: String, detail: String },
    #[error("polynomial is not self-adjoint: no adjoint partner for `{word}`")]
    NotSelfAdjoint { word: String },
    #[error("unsupported Haar unitary usage in `{word}`: {detail}")]
    UnsupportedHaarUsage { word: String, detail: String },
}

/// Freeness-class label. Class 0 holds never-rotated deterministic data and constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClassId(pub usize);

impl ClassId {
    pub const AMBIENT: ClassId = ClassId(0);
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class{}", self.0)
    }
}

/// Block sizes `[n_0, …, n_k]` of a rectangular space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RectSpace {
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl RectSpace {
    pub fn new(block_dims: Vec<usize>) -> Result<Self, ModelError> {
        if block_dims.is_empty() {
            return Err(ModelError::InvalidSpace("at least one block is required".into()));
        }
        if let Some(i) = block_dims.iter().position(|&n| n == 0) {
            return Err(ModelError::InvalidSpace(format!("block {i} has dimension 0")));
        }
        let mut offsets = Vec::with_capacity(block_dims.len());
        let mut acc = 0;
        for &n in &block_dims {
            offsets.push(acc);
            acc += n;
        }
        Ok(RectSpace { block_dims, offsets })
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn block_dim(&self, block: usize) -> usize {
        self.block_dims[block]
    }

    /// `Ñ = Σ n_i`.
    pub fn total_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    /// Relative trace `α_i = n_i / Ñ`.
    pub fn weight(&self, block: usize) -> f64 {
        self.block_dims[block] as f64 / self.total_dim() as f64
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block] + self.block_dims[block]
    }

    /// Block containing the global index `idx`.
    pub fn block_of(&self, idx: usize) -> usize {
        match self.offsets.binary_search(&idx) {
            Ok(b) => b,
            Err(b) => b - 1,
        }
    }

    /// Embeds a `n_row × n_col` block matrix into an `Ñ × Ñ` zero matrix.
    pub fn pad(&self, m: &CMatrix, row_block: usize, col_block: usize) -> CMatrix {
        let n = self.total_dim();
        let mut out = CMatrix::zeros(n, n);
        out.view_mut(
            (self.offset(row_block), self.offset(col_block)),
            (m.nrows(), m.ncols()),
        )
        .copy_from(m);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymbolKind {
    Deterministic {
        matrix: CMatrix,
        row_block: usize,
        col_block: usize,
    },
    Circular {
        block: usize,
    },
    Semicircular {
        block: usize,
    },
    HaarUnitary {
        block: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub name: String,
    pub kind: SymbolKind,
    pub class_id: ClassId,
}

impl Symbol {
    pub fn deterministic(name: &str, matrix: CMatrix, row_block: usize, col_block: usize) -> Self {
        Symbol {
            name: name.to_string(),
            kind: SymbolKind::Deterministic {
                matrix,
                row_block,
                col_block,
            },
            class_id: ClassId::AMBIENT,
        }
    }

    pub fn circular(name: &str, block: usize) -> Self {
        Self::random(name, SymbolKind::Circular { block })
    }

    pub fn semicircular(name: &str, block: usize) -> Self {
        Self::random(name, SymbolKind::Semicircular { block })
    }

    pub fn haar(name: &str, block: usize) -> Self {
        Self::random(name, SymbolKind::HaarUnitary { block })
    }

    fn random(name: &str, kind: SymbolKind) -> Self {
        Symbol {
            name: name.to_string(),
            kind,
            class_id: ClassId::AMBIENT,
        }
    }

    /// `(row_block, col_block)` of the symbol itself (not its adjoint).
    pub fn blocks(&self) -> (usize, usize) {
        match &self.kind {
            SymbolKind::Deterministic {
                row_block,
                col_block,
                ..
            } => (*row_block, *col_block),
            SymbolKind::Circular { block }
            | SymbolKind::Semicircular { block }
            | SymbolKind::HaarUnitary { block } => (*block, *block),
        }
    }

    pub fn is_haar(&self) -> bool {
        matches!(self.kind, SymbolKind::HaarUnitary { .. })
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, SymbolKind::Deterministic { .. })
    }

    /// Semicirculars and exactly Hermitian square deterministic matrices.
    pub fn is_self_adjoint(&self) -> bool {
        match &self.kind {
            SymbolKind::Semicircular { .. } => true,
            SymbolKind::Deterministic {
                matrix,
                row_block,
                col_block,
            } => row_block == col_block && is_exactly_hermitian(matrix),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Factor {
    pub symbol: String,
    pub adjoint: bool,
}

impl Factor {
    pub fn new(symbol: &str, adjoint: bool) -> Self {
        Factor {
            symbol: symbol.to_string(),
            adjoint,
        }
    }

    pub fn flipped(&self) -> Self {
        Factor {
            symbol: self.symbol.clone(),
            adjoint: !self.adjoint,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.symbol, if self.adjoint { "'" } else { "" })
    }
}

pub type Word = Vec<Factor>;

pub fn word_adjoint(word: &[Factor]) -> Word {
    word.iter().rev().map(Factor::flipped).collect()
}

pub fn format_word(word: &[Factor]) -> String {
    if word.is_empty() {
        return "1".to_string();
    }
    word.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("*")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coeff: C64,
    pub word: Word,
}

impl Monomial {
    pub fn new(coeff: C64, word: Word) -> Self {
        Monomial { coeff, word }
    }

    pub fn adjoint(&self) -> Monomial {
        Monomial {
            coeff: self.coeff.conj(),
            word: word_adjoint(&self.word),
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})*{}", self.coeff.re, self.coeff.im, format_word(&self.word))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub monomials: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(monomials: Vec<Monomial>) -> Self {
        Polynomial { monomials }
    }

    pub fn adjoint(&self) -> Polynomial {
        Polynomial::new(self.monomials.iter().map(Monomial::adjoint).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.monomials.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.monomials.iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// Complete model: space, symbols (in declaration order) and the polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub space: RectSpace,
    pub symbols: Vec<Symbol>,
    pub polynomial: Polynomial,
    pub target_block: usize,
    /// Block interfaces `[b_0, …, b_k]` of each monomial, filled by [`validate`].
    pub block_traces: Option<Vec<Vec<usize>>>,
}

impl ModelSpec {
    /// Assigns freeness classes: deterministic symbols go to class 0, every
    /// random or Haar symbol gets a fresh class in declaration order.
    pub fn new(
        space: RectSpace,
        mut symbols: Vec<Symbol>,
        polynomial: Polynomial,
        target_block: usize,
    ) -> Self {
        let mut next = 1;
        for s in &mut symbols {
            if s.is_deterministic() {
                s.class_id = ClassId::AMBIENT;
            } else {
                s.class_id = ClassId(next);
                next += 1;
            }
        }
        ModelSpec {
            space,
            symbols,
            polynomial,
            target_block,
            block_traces: None,
        }
    }

    pub fn symbol(&self, name: &str) -> Option<&Symbol> {
        self.symbols.iter().find(|s| s.name == name)
    }

    fn lookup(&self, name: &str) -> Result<&Symbol, ModelError> {
        self.symbol(name)
            .ok_or_else(|| ModelError::UnknownSymbol(name.to_string()))
    }

    /// `(row_block, col_block)` of a factor, accounting for the adjoint flag.
    pub fn factor_blocks(&self, factor: &Factor) -> Result<(usize, usize), ModelError> {
        let (r, c) = self.lookup(&factor.symbol)?.blocks();
        Ok(if factor.adjoint { (c, r) } else { (r, c) })
    }

    pub fn has_haar(&self) -> bool {
        self.symbols.iter().any(Symbol::is_haar)
    }

    pub fn has_random(&self) -> bool {
        self.symbols.iter().any(|s| !s.is_deterministic())
    }

    pub fn max_class(&self) -> usize {
        self.symbols.iter().map(|s| s.class_id.0).max().unwrap_or(0)
    }
}

fn check_symbols(spec: &ModelSpec) -> Result<(), ModelError> {
    let k = spec.space.num_blocks();
    let mut seen = BTreeSet::new();
    for s in &spec.symbols {
        if !seen.insert(s.name.as_str()) {
            return Err(ModelError::BadSymbol {
                name: s.name.clone(),
                detail: "declared twice".into(),
            });
        }
        let (r, c) = s.blocks();
        if r >= k || c >= k {
            return Err(ModelError::BadSymbol {
                name: s.name.clone(),
                detail: format!("block index out of range (space has {k} blocks)"),
            });
        }
        if let SymbolKind::Deterministic { matrix, .. } = &s.kind {
            let want = (spec.space.block_dim(r), spec.space.block_dim(c));
            if matrix.shape() != want {
                return Err(ModelError::BadSymbol {
                    name: s.name.clone(),
                    detail: format!(
                        "matrix is {}x{} but blocks ({r},{c}) require {}x{}",
                        matrix.nrows(),
                        matrix.ncols(),
                        want.0,
                        want.1
                    ),
                });
            }
            if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(ModelError::BadSymbol {
                    name: s.name.clone(),
                    detail: "non-finite matrix entry".into(),
                });
            }
        }
    }
    Ok(())
}

/// Drops adjoint flags on self-adjoint symbols, merges identical words
/// (first occurrence order) and removes zero coefficients.
fn normalize(spec: &ModelSpec, poly: &Polynomial) -> Result<Polynomial, ModelError> {
    let mut order: Vec<Word> = Vec::new();
    let mut coeffs: BTreeMap<Word, C64> = BTreeMap::new();
    for mono in &poly.monomials {
        let mut word = Vec::with_capacity(mono.word.len());
        for f in &mono.word {
            let sym = spec.lookup(&f.symbol)?;
            word.push(Factor {
                symbol: f.symbol.clone(),
                adjoint: f.adjoint && !sym.is_self_adjoint(),
            });
        }
        match coeffs.get_mut(&word) {
            Some(c) => *c += mono.coeff,
            None => {
                coeffs.insert(word.clone(), mono.coeff);
                order.push(word);
            }
        }
    }
    Ok(Polynomial::new(
        order
            .into_iter()
            .filter_map(|w| {
                let c = coeffs[&w];
                (c != C64::new(0.0, 0.0)).then_some(Monomial::new(c, w))
            })
            .collect(),
    ))
}

fn block_trace(spec: &ModelSpec, word: &[Factor]) -> Result<Vec<usize>, ModelError> {
    let t = spec.target_block;
    if word.is_empty() {
        return Ok(vec![t, t]);
    }
    let mut trace = Vec::with_capacity(word.len() + 1);
    let (r0, _) = spec.factor_blocks(&word[0])?;
    if r0 != t {
        return Err(ModelError::BlockMismatch {
            word: format_word(word),
            detail: format!("starts in block {r0}, target block is {t}"),
        });
    }
    trace.push(r0);
    for (i, f) in word.iter().enumerate() {
        let (r, c) = spec.factor_blocks(f)?;
        let prev = *trace.last().unwrap();
        if r != prev {
            return Err(ModelError::BlockMismatch {
                word: format_word(word),
                detail: format!(
                    "factor {} (`{}`) has row block {r} but the preceding column block is {prev}",
                    i + 1,
                    f
                ),
            });
        }
        trace.push(c);
    }
    let last = *trace.last().unwrap();
    if last != t {
        return Err(ModelError::BlockMismatch {
            word: format_word(word),
            detail: format!("ends in block {last}, target block is {t}"),
        });
    }
    Ok(trace)
}

/// Checks symbols, block chains and formal self-adjointness; returns the
/// spec with a normalized polynomial and per-monomial block traces.
pub fn validate(spec: &ModelSpec) -> Result<ModelSpec, ModelError> {
    if spec.target_block >= spec.space.num_blocks() {
        return Err(ModelError::InvalidSpace(format!(
            "target block {} out of range",
            spec.target_block
        )));
    }
    check_symbols(spec)?;
    let poly = normalize(spec, &spec.polynomial)?;
    let traces = poly
        .monomials
        .iter()
        .map(|m| block_trace(spec, &m.word))
        .collect::<Result<Vec<_>, _>>()?;

    let lookup: BTreeMap<&Word, C64> = poly.monomials.iter().map(|m| (&m.word, m.coeff)).collect();
    let adjoint = normalize(spec, &poly.adjoint())?;
    for m in &adjoint.monomials {
        // m = conj(γ) w* for some γ w in the polynomial; it must appear verbatim
        if lookup.get(&m.word) != Some(&m.coeff) {
            let original = word_adjoint(&m.word);
            return Err(ModelError::NotSelfAdjoint {
                word: format_word(&original),
            });
        }
    }

    let mut out = spec.clone();
    out.polynomial = poly;
    out.block_traces = Some(traces);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Context {
    Ambient,
    Rotated(String),
}

/// Removes Haar unitaries that appear as sandwiches `u W u'` (or `u' W u`).
///
/// Adjacent `u u'` pairs cancel first. The symbols inside each sandwich are
/// moved into the freeness class of the conjugating unitary; a symbol that
/// also occurs outside that sandwich family is duplicated as `name@u`.
pub fn eliminate_haar(spec: &ModelSpec) -> Result<ModelSpec, ModelError> {
    let spec = validate(spec)?;
    let is_haar = |name: &str| spec.symbol(name).is_some_and(Symbol::is_haar);

    // (monomial index, per-factor context) after cancellation
    let mut rewritten: Vec<(C64, Vec<(Factor, Context)>)> = Vec::new();
    let mut usage: BTreeMap<String, BTreeSet<Context>> = BTreeMap::new();

    for mono in &spec.polynomial.monomials {
        let mut stack: Vec<Factor> = Vec::with_capacity(mono.word.len());
        for f in &mono.word {
            if let Some(top) = stack.last() {
                if is_haar(&f.symbol) && top.symbol == f.symbol && top.adjoint != f.adjoint {
                    stack.pop();
                    continue;
                }
            }
            stack.push(f.clone());
        }
        let word = stack;
        let unsupported = |detail: &str| ModelError::UnsupportedHaarUsage {
            word: format_word(&mono.word),
            detail: detail.to_string(),
        };

        let mut out = Vec::with_capacity(word.len());
        let mut i = 0;
        while i < word.len() {
            let f = &word[i];
            if !is_haar(&f.symbol) {
                out.push((f.clone(), Context::Ambient));
                i += 1;
                continue;
            }
            let close = (i + 1..word.len())
                .find(|&j| is_haar(&word[j].symbol))
                .ok_or_else(|| unsupported(&format!("`{f}` has no closing adjoint")))?;
            let g = &word[close];
            if g.symbol != f.symbol {
                return Err(unsupported(&format!(
                    "`{f}` is interleaved with `{g}`; only u·W·u' sandwiches are supported"
                )));
            }
            if g.adjoint == f.adjoint {
                return Err(unsupported(&format!(
                    "`{f}` is closed by `{g}` instead of its adjoint"
                )));
            }
            for inner in &word[i + 1..close] {
                out.push((inner.clone(), Context::Rotated(f.symbol.clone())));
            }
            i = close + 1;
        }
        for (f, ctx) in &out {
            usage.entry(f.symbol.clone()).or_default().insert(ctx.clone());
        }
        rewritten.push((mono.coeff, out));
    }

    let mut next_class = spec.max_class() + 1;
    let mut symbols = Vec::new();
    let mut rename: BTreeMap<(String, Context), String> = BTreeMap::new();
    for sym in &spec.symbols {
        if sym.is_haar() {
            continue;
        }
        let contexts = match usage.get(&sym.name) {
            Some(c) => c.clone(),
            None => {
                symbols.push(sym.clone());
                continue;
            }
        };
        let single = contexts.len() == 1;
        for ctx in contexts {
            let mut copy = sym.clone();
            match &ctx {
                Context::Ambient => {}
                Context::Rotated(u) => {
                    if !single {
                        copy.name = format!("{}@{}", sym.name, u);
                        if !sym.is_deterministic() {
                            copy.class_id = ClassId(next_class);
                            next_class += 1;
                        }
                    }
                    if sym.is_deterministic() {
                        copy.class_id = spec.symbol(u).expect("haar symbol").class_id;
                    }
                }
            }
            rename.insert((sym.name.clone(), ctx), copy.name.clone());
            symbols.push(copy);
        }
    }

    let polynomial = Polynomial::new(
        rewritten
            .into_iter()
            .map(|(coeff, factors)| {
                let word = factors
                    .into_iter()
                    .map(|(f, ctx)| Factor {
                        symbol: rename[&(f.symbol.clone(), ctx)].clone(),
                        adjoint: f.adjoint,
                    })
                    .collect();
                Monomial::new(coeff, word)
            })
            .collect(),
    );

    let out = ModelSpec {
        space: spec.space.clone(),
        symbols,
        polynomial,
        target_block: spec.target_block,
        block_traces: None,
    };
    validate(&out)
}
