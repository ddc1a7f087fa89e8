//! Plain-text network checkpoints.
//!
//! ```text
//! lesp-mlp 1
//! activation relu
//! layers 4 256 256 2
//! w 0
//! <one line per weight row, space separated>
//! b 0
//! <one line with the bias vector>
//! w 1
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a write/read
//! cycle reproduces every parameter bit for bit.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Mlp};
use crate::error::{LespError, Result};

const MAGIC: &str = "lesp-mlp 1";

impl Mlp {
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "activation {}", self.activation().id())?;
        let sizes: Vec<String> = self.sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "layers {}", sizes.join(" "))?;
        for l in 0..self.num_layers() {
            writeln!(out, "w {l}")?;
            for row in self.weights[l].rows() {
                writeln!(out, "{}", join(row.iter()))?;
            }
            writeln!(out, "b {l}")?;
            writeln!(out, "{}", join(self.biases[l].iter()))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = move || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| LespError::Parse("unexpected end of checkpoint".into()))?
                .map_err(LespError::from)
        };
        if next()?.trim() != MAGIC {
            return Err(LespError::Parse("not an mlp checkpoint".into()));
        }
        let act_line = next()?;
        let activation = act_line
            .strip_prefix("activation ")
            .and_then(|id| Activation::from_id(id.trim()))
            .ok_or_else(|| LespError::Parse(format!("bad activation line {act_line:?}")))?;
        let layer_line = next()?;
        let sizes: Vec<usize> = layer_line
            .strip_prefix("layers ")
            .ok_or_else(|| LespError::Parse(format!("bad layers line {layer_line:?}")))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| LespError::Parse(format!("bad layer size {t:?}"))))
            .collect::<Result<_>>()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in sizes.windows(2).enumerate() {
            expect_tag(&next()?, 'w', l)?;
            let mut data = Vec::with_capacity(pair[0] * pair[1]);
            for _ in 0..pair[0] {
                let row = parse_row(&next()?)?;
                if row.len() != pair[1] {
                    return Err(LespError::Parse(format!("layer {l}: weight row has {} values", row.len())));
                }
                data.extend(row);
            }
            weights.push(Array2::from_shape_vec((pair[0], pair[1]), data).expect("checked shape"));
            expect_tag(&next()?, 'b', l)?;
            let b = parse_row(&next()?)?;
            if b.len() != pair[1] {
                return Err(LespError::Parse(format!("layer {l}: bias has {} values", b.len())));
            }
            biases.push(Array1::from(b));
        }
        Mlp::from_parts(&sizes, activation, weights, biases)
    }
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_row(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| LespError::Parse(format!("bad number {t:?}"))))
        .collect()
}

fn expect_tag(line: &str, tag: char, layer: usize) -> Result<()> {
    let want = format!("{tag} {layer}");
    if line.trim() != want {
        return Err(LespError::Parse(format!("expected {want:?}, found {line:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn text_round_trip_is_exact(seed in any::<u64>(), hidden in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&[3, hidden, 2], Activation::Relu, &mut rng).unwrap();
            let mut buf = Vec::new();
            net.write_text(&mut buf).unwrap();
            let back = Mlp::read_text(&buf[..]).unwrap();
            prop_assert_eq!(back, net);
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let net = Mlp::zeros(&[2, 3, 1], Activation::Identity).unwrap();
        let mut buf = Vec::new();
        net.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(Mlp::read_text(cut.as_bytes()).is_err());
    }
}
