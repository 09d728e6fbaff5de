//! ASCII OFF reading and writing (triangles only).

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Parses ASCII OFF text into positions and triangles.
///
/// Comments start with `#`. The vertex/face/edge counts may sit on the header
/// line (`OFF 8 6 0`) or on the next non-comment line. Extra per-vertex
/// columns (colors) are ignored; faces must be triangles.
pub fn parse_off(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "empty file".into(),
    })?;
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(Error::Parse {
            line: hline,
            msg: format!("expected OFF header, found {header:?}"),
        });
    }
    let rest: Vec<&str> = header_tokens.collect();
    let (cline, counts) = if rest.is_empty() {
        let (l, c) = lines.next().ok_or(Error::Parse {
            line: hline,
            msg: "missing element counts".into(),
        })?;
        (l, c.split_whitespace().collect::<Vec<_>>())
    } else {
        (hline, rest)
    };
    if counts.len() < 2 {
        return Err(Error::Parse {
            line: cline,
            msg: "expected vertex and face counts".into(),
        });
    }
    let nv: usize = parse_tok(counts[0], cline)?;
    let nf: usize = parse_tok(counts[1], cline)?;

    let mut positions = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines.next().ok_or(Error::Parse {
            line: cline,
            msg: format!("expected {nv} vertices, file ended after {}", positions.len()),
        })?;
        let tok: Vec<&str> = s.split_whitespace().collect();
        if tok.len() < 3 {
            return Err(Error::Parse {
                line: l,
                msg: "vertex line needs three coordinates".into(),
            });
        }
        positions.push([
            parse_tok(tok[0], l)?,
            parse_tok(tok[1], l)?,
            parse_tok(tok[2], l)?,
        ]);
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, s) = lines.next().ok_or(Error::Parse {
            line: cline,
            msg: format!("expected {nf} faces, file ended after {}", triangles.len()),
        })?;
        let tok: Vec<&str> = s.split_whitespace().collect();
        let k: usize = parse_tok(tok[0], l)?;
        if k != 3 {
            return Err(Error::Parse {
                line: l,
                msg: format!("only triangular faces are supported, found a {k}-gon"),
            });
        }
        if tok.len() < 4 {
            return Err(Error::Parse {
                line: l,
                msg: "face line needs three vertex indices".into(),
            });
        }
        triangles.push([
            parse_tok(tok[1], l)?,
            parse_tok(tok[2], l)?,
            parse_tok(tok[3], l)?,
        ]);
    }
    Ok((positions, triangles))
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {tok:?}"),
    })
}

/// Serializes to ASCII OFF. Coordinates use Rust's shortest round-trip
/// formatting, so a write/read cycle is bit-exact.
pub fn write_off(positions: &[[f64; 3]], triangles: &[[usize; 3]]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "OFF");
    let _ = writeln!(s, "{} {} 0", positions.len(), triangles.len());
    for p in positions {
        let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    for t in triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}
