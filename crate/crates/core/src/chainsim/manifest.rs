//! Text form of degradation chains.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::{ChainOp, DegradationChain, OpKind};
use crate::error::{Error, Result};

pub(super) fn format_chain(chain: &DegradationChain) -> String {
    let mut out = String::new();
    for (i, op) in chain.ops.iter().enumerate() {
        if i > 0 {
            out.push('|');
        }
        let _ = write!(out, "{}(", op.kind);
        for (spec, v) in op.kind.params().iter().zip(op.values()) {
            let _ = write!(out, "{}={},", spec.key, v);
        }
        let _ = write!(out, "seed={})", op.seed);
    }
    out
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, at: usize, expected: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: at,
            expected: expected.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(self.pos, format!("`{}`", c as char))
        }
    }

    fn ident(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_')) {
            self.pos += 1;
        }
        if self.pos == start {
            return self.err(start, "identifier");
        }
        Ok((start, &self.src[start..self.pos]))
    }

    fn number_token(&mut self) -> (usize, &'a str) {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9' | b'+' | b'-' | b'.' | b'e' | b'E')) {
            self.pos += 1;
        }
        (start, &self.src[start..self.pos])
    }

    fn op(&mut self) -> Result<ChainOp> {
        let (kstart, kname) = self.ident()?;
        let kind: OpKind = match kname.parse() {
            Ok(k) => k,
            Err(_) => {
                let names: Vec<&str> = OpKind::ALL.iter().map(|k| k.as_str()).collect();
                return self.err(kstart, format!("op kind (one of {})", names.join(", ")));
            }
        };
        self.expect(b'(')?;
        let specs = kind.params();
        let mut values: Vec<Option<f64>> = alloc::vec![None; specs.len()];
        let mut seed: Option<u64> = None;
        loop {
            let (key_at, key) = self.ident()?;
            self.expect(b'=')?;
            let (val_at, tok) = self.number_token();
            if key == "seed" {
                if seed.is_some() {
                    return self.err(key_at, "no duplicate `seed`");
                }
                match tok.parse::<u64>() {
                    Ok(s) => seed = Some(s),
                    Err(_) => return self.err(val_at, "unsigned integer seed"),
                }
            } else {
                let Some(i) = specs.iter().position(|s| s.key == key) else {
                    let mut keys: Vec<&str> = specs.iter().map(|s| s.key).collect();
                    keys.push("seed");
                    return self.err(key_at, format!("parameter key for {kind} (one of {})", keys.join(", ")));
                };
                if values[i].is_some() {
                    return self.err(key_at, format!("no duplicate `{key}`"));
                }
                match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => values[i] = Some(v),
                    _ => return self.err(val_at, "finite number"),
                }
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => return self.err(self.pos, "`,` or `)`"),
            }
        }
        let close = self.pos - 1;
        let Some(seed) = seed else {
            return self.err(close, "`seed=` before `)`");
        };
        let mut pairs = Vec::with_capacity(specs.len());
        for (spec, v) in specs.iter().zip(&values) {
            match v {
                Some(v) => pairs.push((spec.key, *v)),
                None => return self.err(close, format!("parameter `{}` for {kind}", spec.key)),
            }
        }
        ChainOp::new(kind, &pairs, seed).map_err(|e| Error::Parse {
            offset: kstart,
            expected: e.to_string(),
        })
    }
}

pub(super) fn parse_chain(src: &str) -> Result<DegradationChain> {
    let mut p = Parser { src, pos: 0 };
    let mut ops = Vec::new();
    if src.is_empty() {
        return Ok(DegradationChain { ops });
    }
    loop {
        ops.push(p.op()?);
        match p.peek() {
            None => break,
            Some(b'|') => p.pos += 1,
            Some(_) => return p.err(p.pos, "`|` or end of input"),
        }
    }
    Ok(DegradationChain { ops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainsim::{build_chain, Profile};
    use crate::numerics::SeededRng;

    #[test]
    fn empty_round_trip() {
        assert_eq!(parse_chain("").unwrap(), DegradationChain::default());
        assert_eq!(format_chain(&DegradationChain::default()), "");
    }

    #[test]
    fn canonical_text() {
        let c = DegradationChain::new(alloc::vec![
            ChainOp::new(OpKind::Jpeg, &[("q", 50.0)], 17).unwrap(),
            ChainOp::new(OpKind::Color, &[("contrast", 0.9), ("gain", 1.1)], 3).unwrap(),
        ]);
        let s = format_chain(&c);
        assert_eq!(s, "jpeg(q=50,seed=17)|color(gain=1.1,contrast=0.9,seed=3)");
        assert_eq!(parse_chain(&s).unwrap(), c);
    }

    #[test]
    fn randomized_round_trip() {
        let mut rng = SeededRng::new(12, 0);
        for _ in 0..1000 {
            let c = build_chain(&mut rng, Profile::Mixed, (0, 8)).unwrap();
            assert_eq!(parse_chain(&format_chain(&c)).unwrap(), c);
        }
    }

    #[test]
    fn empty_value_reports_its_offset() {
        match parse_chain("jpeg(q=)") {
            Err(Error::Parse { offset, expected }) => {
                assert_eq!(offset, 7);
                assert!(expected.contains("number"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_kind_rejected() {
        assert!(matches!(parse_chain("jpeg(q=50,zz=1,seed=1)"), Err(Error::Parse { offset: 10, .. })));
        assert!(matches!(parse_chain("warp(q=50,seed=1)"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(parse_chain("jpeg(q=50)"), Err(Error::Parse { .. })));
        assert!(matches!(parse_chain("jpeg(q=50,seed=1)|"), Err(Error::Parse { offset: 18, .. })));
        assert!(matches!(parse_chain("jpeg(q=50,seed=-1)"), Err(Error::Parse { .. })));
    }
}
