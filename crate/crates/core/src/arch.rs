//! Architecture strings: `784-300-100-10` for dense stacks and
//! `784-12c5-12c7-10` for convolutional ones (`NcK` is N feature maps with
//! K x K kernels). The first token is the input size; a square input feeding
//! a convolution is read as a single-channel image.

use crate::error::{Error, Result};
use crate::types::{ActivationKind, LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Dense(usize),
    Conv { channels: usize, kernel: usize },
}

fn parse_token(tok: &str) -> Result<Token> {
    let bad = || Error::Arch(format!("bad token {tok:?}"));
    let num = |s: &str| -> Result<usize> {
        let v: usize = s.parse().map_err(|_| bad())?;
        if v == 0 {
            Err(bad())
        } else {
            Ok(v)
        }
    };
    match tok.split_once('c') {
        Some((n, k)) => Ok(Token::Conv {
            channels: num(n)?,
            kernel: num(k)?,
        }),
        None => Ok(Token::Dense(num(tok)?)),
    }
}

pub fn parse_arch(arch: &str, activation: ActivationKind) -> Result<NetworkSpec> {
    let mut tokens = arch.trim().split('-');
    let input = match tokens.next().map(parse_token).transpose()? {
        Some(Token::Dense(n)) => n,
        _ => {
            return Err(Error::Arch(format!(
                "{arch:?} must start with an input size"
            )))
        }
    };
    let rest = tokens.map(parse_token).collect::<Result<Vec<_>>>()?;
    if rest.is_empty() {
        return Err(Error::Arch(format!("{arch:?} has no layers")));
    }
    let mut shape = vec![input];
    let mut layers = Vec::with_capacity(rest.len());
    for tok in rest {
        let layer = match tok {
            Token::Dense(n) => LayerSpec {
                kind: crate::types::LayerKind::Dense,
                in_shape: shape.clone(),
                out_shape: vec![n],
                activation,
            },
            Token::Conv { channels, kernel } => {
                let in3 = match *shape.as_slice() {
                    [c, h, w] => [c, h, w],
                    [n] => {
                        let side = (n as f64).sqrt().round() as usize;
                        if side * side != n {
                            return Err(Error::Arch(format!(
                                "input size {n} is not a square image"
                            )));
                        }
                        [1, side, side]
                    }
                    _ => return Err(Error::Arch(format!("cannot convolve shape {shape:?}"))),
                };
                LayerSpec::conv2d(in3, channels, kernel, activation)
                    .map_err(|e| Error::Arch(e.to_string()))?
            }
        };
        shape = layer.out_shape.clone();
        layers.push(layer);
    }
    NetworkSpec::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LayerKind;

    #[test]
    fn dense_stack() {
        let s = parse_arch("784-300-100-10", ActivationKind::Binary).unwrap();
        assert_eq!(s.layers.len(), 3);
        assert_eq!(s.input_size(), 784);
        assert_eq!(s.num_classes(), 10);
        assert_eq!(s.layers[1].in_shape, vec![300]);
    }

    #[test]
    fn conv_notation() {
        let s = parse_arch("784-12c5-12c7-10", ActivationKind::drelu(64)).unwrap();
        assert_eq!(
            s.layers[0].kind,
            LayerKind::Conv2d {
                kernel: 5,
                channels: 12
            }
        );
        assert_eq!(s.layers[0].in_shape, vec![1, 28, 28]);
        assert_eq!(s.layers[0].out_shape, vec![12, 24, 24]);
        assert_eq!(
            s.layers[1].kind,
            LayerKind::Conv2d {
                kernel: 7,
                channels: 12
            }
        );
        assert_eq!(s.layers[1].out_shape, vec![12, 18, 18]);
        assert_eq!(s.layers[2].kind, LayerKind::Dense);
        assert_eq!(s.layers[2].in_shape, vec![12, 18, 18]);
        assert_eq!(s.num_classes(), 10);
    }

    #[test]
    fn four_conv_net() {
        let s = parse_arch("784-12c3-12c5-12c7-12c9-10", ActivationKind::Binary).unwrap();
        assert_eq!(s.layers[3].out_shape, vec![12, 8, 8]);
    }

    #[test]
    fn bad_token_is_named() {
        let err = parse_arch("784-xyz-10", ActivationKind::Binary).unwrap_err();
        assert!(err.to_string().contains("\"xyz\""), "{err}");
    }

    #[test]
    fn conv_needs_square_input() {
        assert!(parse_arch("783-4c3-10", ActivationKind::Binary).is_err());
        assert!(parse_arch("784", ActivationKind::Binary).is_err());
        assert!(parse_arch("784-0-10", ActivationKind::Binary).is_err());
    }
}
