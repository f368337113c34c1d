//! Pair partitions and the moment counts they give for circular elements.

use thiserror::Error;

/// Largest order enumerated explicitly (19!! ≈ 6.5e8 matchings).
pub const MAX_ENUMERATION: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CombinatoricsError {
    #[error("order {0} exceeds the enumeration limit {MAX_ENUMERATION}")]
    TooLarge(usize),
    #[error("order {0} is odd; pairings need an even number of points")]
    OddOrder(usize),
}

/// Perfect matching of `{1, …, n}`, pairs sorted by their smaller element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pairing {
    pub blocks: Vec<(usize, usize)>,
}

impl Pairing {
    pub fn is_non_crossing(&self) -> bool {
        self.blocks.iter().all(|&(a, c)| {
            self.blocks
                .iter()
                .all(|&(b, d)| !(a < b && b < c && c < d))
        })
    }
}

fn check_order(n: usize) -> Result<(), CombinatoricsError> {
    if n % 2 == 1 {
        return Err(CombinatoricsError::OddOrder(n));
    }
    if n > MAX_ENUMERATION {
        return Err(CombinatoricsError::TooLarge(n));
    }
    Ok(())
}

/// All `(n − 1)!!` pairings of `{1, …, n}` in lexicographic order.
pub fn pair_partitions(n: usize) -> Result<Vec<Pairing>, CombinatoricsError> {
    check_order(n)?;
    let mut out = Vec::new();
    let mut free: Vec<usize> = (1..=n).collect();
    let mut current = Vec::with_capacity(n / 2);
    enumerate(&mut free, &mut current, &mut |p| {
        out.push(Pairing { blocks: p.to_vec() })
    });
    Ok(out)
}

/// Pairs the smallest free point with each later free point in turn, which
/// yields pairings in lexicographic order.
fn enumerate(free: &mut Vec<usize>, current: &mut Vec<(usize, usize)>, visit: &mut impl FnMut(&[(usize, usize)])) {
    if free.is_empty() {
        visit(current);
        return;
    }
    let first = free.remove(0);
    for i in 0..free.len() {
        let partner = free.remove(i);
        current.push((first, partner));
        enumerate(free, current, visit);
        current.pop();
        free.insert(i, partner);
    }
    free.insert(0, first);
}

/// Non-crossing pairings, counted without materializing the crossing ones.
fn count_non_crossing(letters: &[bool], admissible: impl Fn(bool, bool) -> bool + Copy) -> u64 {
    // Interval DP: in a non-crossing pairing of [i, j), i pairs with some k
    // and both (i, k) and (k, j) are paired internally.
    let n = letters.len();
    if n % 2 == 1 {
        return 0;
    }
    let mut table = vec![vec![0u64; n + 1]; n + 1];
    for i in 0..=n {
        table[i][i] = 1;
    }
    for len in (2..=n).step_by(2) {
        for i in 0..=n - len {
            let j = i + len;
            let mut total = 0u64;
            for k in (i + 1..j).step_by(2) {
                if admissible(letters[i], letters[k]) {
                    total += table[i + 1][k] * table[k + 1][j];
                }
            }
            table[i][j] = total;
        }
    }
    table[0][n]
}

/// `|NCP_2(n)|`: explicit enumeration for `n ≤ 20`, the Catalan formula
/// beyond.
pub fn ncp2_count(n: usize) -> Result<u64, CombinatoricsError> {
    if n % 2 == 1 {
        return Err(CombinatoricsError::OddOrder(n));
    }
    if n > MAX_ENUMERATION {
        if n / 2 > 33 {
            return Err(CombinatoricsError::TooLarge(n));
        }
        return Ok(catalan(n as u64 / 2));
    }
    Ok(non_crossing_pairings(n).len() as u64)
}

/// Non-crossing pairings of `{1, …, n}` in lexicographic order; branches
/// that already cross are pruned.
pub fn non_crossing_pairings(n: usize) -> Vec<Pairing> {
    fn go(free: &mut Vec<usize>, current: &mut Vec<(usize, usize)>, out: &mut Vec<Pairing>) {
        if free.is_empty() {
            out.push(Pairing { blocks: current.clone() });
            return;
        }
        let first = free.remove(0);
        for i in 0..free.len() {
            let partner = free[i];
            if current.iter().any(|&(_, b)| first < b && b < partner) {
                continue;
            }
            free.remove(i);
            current.push((first, partner));
            go(free, current, out);
            current.pop();
            free.insert(i, partner);
        }
        free.insert(0, first);
    }
    let mut out = Vec::new();
    if n % 2 == 0 {
        go(&mut (1..=n).collect(), &mut Vec::new(), &mut out);
    }
    out
}

/// `C_n = binom(2n, n) / (n + 1)`, exact up to `n = 33`.
pub fn catalan(n: u64) -> u64 {
    let mut c: u128 = 1;
    for i in 0..n as u128 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c as u64
}

/// Letter of a `*`-word in a circular element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Star {
    Plain,
    Adjoint,
}

impl Star {
    /// Reads `1`/`c` as plain and `*` as adjoint, ignoring separators.
    pub fn parse_word(s: &str) -> Result<Vec<Star>, String> {
        s.chars()
            .filter(|c| !matches!(c, ',' | ' ' | '(' | ')'))
            .map(|c| match c {
                '1' | 'c' => Ok(Star::Plain),
                '*' => Ok(Star::Adjoint),
                other => Err(format!("unexpected letter {other:?}; use 1 or *")),
            })
            .collect()
    }
}

/// `τ(c^{ε_1} ⋯ c^{ε_k})`: non-crossing pairings joining each `c` with a `c*`.
pub fn circular_word_moment(word: &[Star]) -> Result<u64, CombinatoricsError> {
    if word.len() > MAX_ENUMERATION {
        return Err(CombinatoricsError::TooLarge(word.len()));
    }
    let letters: Vec<bool> = word.iter().map(|s| *s == Star::Adjoint).collect();
    Ok(count_non_crossing(&letters, |a, b| a != b))
}
