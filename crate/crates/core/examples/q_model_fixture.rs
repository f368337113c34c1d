//! Writes the fixed-seed Q-model configuration used by the acceptance tests.
//!
//! Usage: `cargo run -p fde-core --example q_model_fixture -- <dir>`

use std::path::PathBuf;

use fde_core::numerics::{c64, CMatrix};
use fde_core::parser::matrix_to_csv;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEED: u64 = 20130;

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let s = (0.5 / cols as f64).sqrt();
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c64(re * s, im * s)
    })
}

/// `A A*` with the lower triangle mirrored so the result is exactly Hermitian.
fn gram(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = gaussian(n, n, rng);
    let mut t = &a * a.adjoint();
    for i in 0..n {
        t[(i, i)].im = 0.0;
        for j in 0..i {
            t[(i, j)] = t[(j, i)].conj();
        }
    }
    t
}

const CONFIG: &str = r#"# Q = R1 U1 T1 U1* R1* + R2 U2 T2 U2* R2* with fixed-seed matrices.
[space]
blocks = [5, 8, 4]
target = 0

[[matrix]]
name = "R1"
row_block = 0
col_block = 1
file = "q_model/R1.csv"

[[matrix]]
name = "R2"
row_block = 0
col_block = 2
file = "q_model/R2.csv"

[[matrix]]
name = "T1"
row_block = 1
col_block = 1
file = "q_model/T1.csv"

[[matrix]]
name = "T2"
row_block = 2
col_block = 2
file = "q_model/T2.csv"

[[element]]
name = "U1"
kind = "haar"
block = 1

[[element]]
name = "U2"
kind = "haar"
block = 2

[polynomial]
expr = "R1*U1*T1*U1'*R1' + R2*U2*T2*U2'*R2'"

[solve]
epsilon = 1e-3

[mc]
m = 40
reps = 100
seed = 1
bins = 80
"#;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "models".into()));
    std::fs::create_dir_all(dir.join("q_model"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let r1 = gaussian(5, 8, &mut rng);
    let r2 = gaussian(5, 4, &mut rng);
    let t1 = gram(8, &mut rng);
    let t2 = gram(4, &mut rng);
    for (name, m) in [("R1", &r1), ("R2", &r2), ("T1", &t1), ("T2", &t2)] {
        std::fs::write(dir.join("q_model").join(format!("{name}.csv")), matrix_to_csv(m))?;
    }
    std::fs::write(dir.join("q_model.toml"), CONFIG)?;
    println!("wrote {}", dir.join("q_model.toml").display());
    Ok(())
}
