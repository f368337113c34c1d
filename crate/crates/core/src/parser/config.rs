use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{parse_polynomial, ParseError};
use crate::model::{ModelSpec, RectSpace, Symbol};
use crate::numerics::{c64, CMatrix, C64};

/// Parsed configuration: the model plus optional run settings.
#[derive(Debug, Clone)]
pub struct Config {
    pub model: ModelSpec,
    pub expr: String,
    pub solve: SolveConfig,
    pub mc: McConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub epsilon: Option<f64>,
    /// `"a:b:n"`.
    pub grid: Option<String>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub quad_nodes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub m: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub bins: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    space: Option<RawSpace>,
    #[serde(default)]
    matrix: Vec<RawMatrix>,
    #[serde(default)]
    element: Vec<RawElement>,
    polynomial: Option<RawPolynomial>,
    #[serde(default)]
    solve: SolveConfig,
    #[serde(default)]
    mc: McConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    blocks: Vec<usize>,
    #[serde(default)]
    target: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    name: String,
    row_block: usize,
    col_block: usize,
    data: Option<Vec<Vec<Entry>>>,
    file: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Entry {
    Int(i64),
    Real(f64),
    Pair([f64; 2]),
    IntPair([i64; 2]),
}

impl Entry {
    fn value(&self) -> C64 {
        match *self {
            Entry::Int(x) => c64(x as f64, 0.0),
            Entry::Real(x) => c64(x, 0.0),
            Entry::Pair([a, b]) => c64(a, b),
            Entry::IntPair([a, b]) => c64(a as f64, b as f64),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    name: String,
    kind: String,
    block: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolynomial {
    expr: String,
}

fn valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name != "adj"
}

/// Parses config text; relative CSV paths resolve against the working directory.
pub fn parse_config(text: &str) -> Result<Config, ParseError> {
    parse_config_with_base(text, Path::new("."))
}

/// Reads and parses a config file; CSV paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<Config, ParseError> {
    let text = std::fs::read_to_string(path).map_err(|e| ParseError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    parse_config_with_base(&text, &base)
}

pub fn parse_config_with_base(text: &str, base: &Path) -> Result<Config, ParseError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let pos = e.span().map(|s| s.start).unwrap_or(0);
        ParseError::SyntaxError {
            pos,
            msg: e.message().to_string(),
        }
    })?;
    let space_raw = raw.space.ok_or_else(|| ParseError::MissingSection("space".into()))?;
    let poly_raw = raw
        .polynomial
        .ok_or_else(|| ParseError::MissingSection("polynomial".into()))?;
    let space = RectSpace::new(space_raw.blocks.clone()).map_err(|e| ParseError::BadValue {
        key: "space.blocks".into(),
        detail: e.to_string(),
    })?;
    let k = space.num_blocks();
    if space_raw.target >= k {
        return Err(ParseError::BadValue {
            key: "space.target".into(),
            detail: format!("block {} out of range (space has {k} blocks)", space_raw.target),
        });
    }

    let mut names = BTreeSet::new();
    let mut check_name = |name: &str| -> Result<(), ParseError> {
        if !valid_identifier(name) {
            return Err(ParseError::BadValue {
                key: "name".into(),
                detail: format!("`{name}` is not a valid identifier"),
            });
        }
        if !names.insert(name.to_string()) {
            return Err(ParseError::DuplicateName(name.to_string()));
        }
        Ok(())
    };

    let mut symbols = Vec::new();
    for m in &raw.matrix {
        check_name(&m.name)?;
        if m.row_block >= k || m.col_block >= k {
            return Err(ParseError::BadMatrixShape {
                name: m.name.clone(),
                detail: format!("block index out of range (space has {k} blocks)"),
            });
        }
        let rows = space.block_dim(m.row_block);
        let cols = space.block_dim(m.col_block);
        let entries: Vec<Vec<C64>> = match (&m.data, &m.file) {
            (Some(data), None) => data.iter().map(|r| r.iter().map(Entry::value).collect()).collect(),
            (None, Some(file)) => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| ParseError::Io {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?;
                parse_csv_rows(&text).map_err(|detail| ParseError::BadValue {
                    key: format!("matrix `{}` file", m.name),
                    detail,
                })?
            }
            (None, None) => {
                return Err(ParseError::MissingSection(format!("matrix `{}`: data or file", m.name)))
            }
            (Some(_), Some(_)) => {
                return Err(ParseError::BadValue {
                    key: format!("matrix `{}`", m.name),
                    detail: "give either data or file, not both".into(),
                })
            }
        };
        let matrix = to_matrix(&m.name, &entries, rows, cols)?;
        symbols.push(Symbol::deterministic(&m.name, matrix, m.row_block, m.col_block));
    }
    for e in &raw.element {
        check_name(&e.name)?;
        if e.block >= k {
            return Err(ParseError::BadValue {
                key: format!("element `{}` block", e.name),
                detail: format!("block {} out of range", e.block),
            });
        }
        let sym = match e.kind.to_ascii_lowercase().as_str() {
            "circular" => Symbol::circular(&e.name, e.block),
            "semicircular" => Symbol::semicircular(&e.name, e.block),
            "haar" => Symbol::haar(&e.name, e.block),
            other => {
                return Err(ParseError::BadValue {
                    key: format!("element `{}` kind", e.name),
                    detail: format!("unknown kind `{other}` (circular, semicircular, haar)"),
                })
            }
        };
        symbols.push(sym);
    }

    let ast = parse_polynomial(&poly_raw.expr)?;
    let model = ModelSpec::new(space, symbols, ast.to_polynomial(), space_raw.target);
    Ok(Config {
        model,
        expr: poly_raw.expr,
        solve: raw.solve,
        mc: raw.mc,
    })
}

fn to_matrix(name: &str, rows: &[Vec<C64>], nrows: usize, ncols: usize) -> Result<CMatrix, ParseError> {
    if rows.len() != nrows {
        return Err(ParseError::BadMatrixShape {
            name: name.into(),
            detail: format!("{} rows given, block requires {nrows}", rows.len()),
        });
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(ParseError::BadMatrixShape {
            name: name.into(),
            detail: format!("row {i} has {} entries, block requires {ncols}", r.len()),
        });
    }
    Ok(CMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn parse_complex(tok: &str) -> Result<C64, String> {
    let t = tok.trim();
    let bad = || format!("cannot parse `{tok}` as a complex number");
    let body = match t.strip_suffix(['j', 'i']) {
        Some(b) => b,
        None => return t.parse::<f64>().map(|x| c64(x, 0.0)).map_err(|_| bad()),
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    match split {
        Some(i) => {
            let re = body[..i].trim().parse::<f64>().map_err(|_| bad())?;
            let im_text = body[i..].trim();
            let im = match im_text {
                "+" => 1.0,
                "-" => -1.0,
                s => s.parse::<f64>().map_err(|_| bad())?,
            };
            Ok(c64(re, im))
        }
        None => {
            let im = match body.trim() {
                "" | "+" => 1.0,
                "-" => -1.0,
                s => s.parse::<f64>().map_err(|_| bad())?,
            };
            Ok(c64(0.0, im))
        }
    }
}

fn parse_csv_rows(text: &str) -> Result<Vec<Vec<C64>>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(parse_complex).collect())
        .collect()
}

/// Parses a CSV matrix (one row per line, entries `re+imj` or `re`).
pub fn parse_csv_matrix(text: &str) -> Result<CMatrix, ParseError> {
    let rows = parse_csv_rows(text).map_err(|detail| ParseError::BadValue {
        key: "csv".into(),
        detail,
    })?;
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    to_matrix("csv", &rows, nrows, ncols)
}

/// `re+imj` with shortest round-trip decimal digits.
pub fn format_complex(z: C64) -> String {
    if z.im.is_sign_negative() {
        format!("{:?}-{:?}j", z.re, -z.im)
    } else {
        format!("{:?}+{:?}j", z.re, z.im)
    }
}

pub fn matrix_to_csv(m: &CMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_complex(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, SymbolKind};

    const Q_HEADER: &str = r#"
[space]
blocks = [2, 3]
target = 0

[[matrix]]
name = "R"
row_block = 0
col_block = 1
data = [[1, [0.5, -1.0], 0.0], [2.5, 0, [0, 1]]]

[[matrix]]
name = "T"
row_block = 1
col_block = 1
data = [[1, 0, 0], [0, 2, 0], [0, 0, 3]]

[[element]]
name = "u"
kind = "haar"
block = 1

[polynomial]
expr = "R*u*T*u'*R'"

[solve]
epsilon = 1e-3
grid = "-1:10:200"

[mc]
m = 4
reps = 3
seed = 7
"#;

    #[test]
    fn parses_inline_config() {
        let cfg = parse_config(Q_HEADER).unwrap();
        let spec = validate(&cfg.model).unwrap();
        assert_eq!(spec.symbols.len(), 3);
        match &spec.symbol("R").unwrap().kind {
            SymbolKind::Deterministic { matrix, .. } => {
                assert_eq!(matrix.shape(), (2, 3));
                assert_eq!(matrix[(0, 1)], c64(0.5, -1.0));
                assert_eq!(matrix[(1, 2)], c64(0.0, 1.0));
            }
            _ => panic!("R should be deterministic"),
        }
        assert_eq!(cfg.solve.epsilon, Some(1e-3));
        assert_eq!(cfg.mc.seed, Some(7));
    }

    #[test]
    fn missing_sections() {
        let no_space = Q_HEADER.replace("[space]\nblocks = [2, 3]\ntarget = 0\n", "");
        assert!(matches!(parse_config(&no_space), Err(ParseError::MissingSection(s)) if s == "space"));
        let no_poly = Q_HEADER.replace("[polynomial]\nexpr = \"R*u*T*u'*R'\"\n", "");
        assert!(matches!(parse_config(&no_poly), Err(ParseError::MissingSection(s)) if s == "polynomial"));
    }

    #[test]
    fn bad_matrix_shape() {
        let text = r#"
[space]
blocks = [2]
[[matrix]]
name = "A"
row_block = 0
col_block = 0
data = [[1, 0], [0, 1], [1, 1]]
[polynomial]
expr = "A"
"#;
        assert!(matches!(parse_config(text), Err(ParseError::BadMatrixShape { .. })));
    }

    #[test]
    fn duplicate_names() {
        let text = Q_HEADER.replace("name = \"T\"", "name = \"R\"");
        assert_eq!(parse_config(&text).unwrap_err(), ParseError::DuplicateName("R".into()));
        let text = Q_HEADER.replace("name = \"u\"", "name = \"T\"");
        assert_eq!(parse_config(&text).unwrap_err(), ParseError::DuplicateName("T".into()));
    }

    #[test]
    fn csv_complex_formats() {
        assert_eq!(parse_complex("1.5").unwrap(), c64(1.5, 0.0));
        assert_eq!(parse_complex(" -2+3j").unwrap(), c64(-2.0, 3.0));
        assert_eq!(parse_complex("1e-3-2.5e+2j").unwrap(), c64(1e-3, -250.0));
        assert_eq!(parse_complex("-4j").unwrap(), c64(0.0, -4.0));
        assert_eq!(parse_complex("j").unwrap(), c64(0.0, 1.0));
        assert!(parse_complex("abc").is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = CMatrix::from_fn(3, 2, |i, j| c64((i as f64 + 0.1).ln() * 1e-7, -(j as f64 + 0.3).exp()));
        assert_eq!(parse_csv_matrix(&matrix_to_csv(&m)).unwrap(), m);
    }

    #[test]
    fn csv_file_relative_to_config() {
        let dir = std::env::temp_dir().join(format!("fde-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let m = CMatrix::from_fn(3, 3, |i, j| c64(if i == j { 1.0 + i as f64 } else { 0.0 }, 0.0));
        std::fs::write(dir.join("t.csv"), matrix_to_csv(&m)).unwrap();
        let text = Q_HEADER.replace("data = [[1, 0, 0], [0, 2, 0], [0, 0, 3]]", "file = \"t.csv\"");
        let path = dir.join("model.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = load_config(&path).unwrap();
        match &cfg.model.symbol("T").unwrap().kind {
            SymbolKind::Deterministic { matrix, .. } => assert_eq!(matrix, &m),
            _ => panic!(),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn syntax_errors_are_reported() {
        assert!(matches!(parse_config("[space\nblocks=1"), Err(ParseError::SyntaxError { .. })));
        let bad_expr = Q_HEADER.replace("R*u*T*u'*R'", "R*(u");
        assert!(matches!(parse_config(&bad_expr), Err(ParseError::UnbalancedParens { .. })));
    }
}
