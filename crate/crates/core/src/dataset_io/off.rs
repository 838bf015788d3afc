//! Object File Format (OFF) mesh reader.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Vertices and triangles as read from a mesh file. Polygons with more than
/// three corners are fan-triangulated.
#[derive(Debug, Clone, PartialEq)]
pub struct RawModel {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

pub fn load_off(path: impl AsRef<Path>) -> Result<RawModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_off(&text, path)
}

pub fn parse_off(text: &str, path: &Path) -> Result<RawModel> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| err(hline, format!("expected OFF header, found {header:?}")))?
        .trim();
    // ModelNet ships files with the counts glued onto the header: "OFF490 518 0"
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| err(hline + 1, "missing element counts".into()))?
    } else {
        (hline, rest)
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| err(cline, format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(err(cline, "expected vertex and face counts".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);
    if nv == 0 {
        return Err(err(cline, "model has no vertices".into()));
    }

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(cline, format!("expected {nv} vertices, file ended early")))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(ln, format!("non-numeric coordinate {t:?}")))
            })
            .collect::<Result<_>>()?;
        if v.len() != 3 {
            return Err(err(ln, "vertex needs three coordinates".into()));
        }
        vertices.push([v[0], v[1], v[2]]);
    }

    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(cline, format!("expected {nf} faces, file ended early")))?;
        let mut toks = l.split_whitespace();
        let n: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(ln, "bad face corner count".into()))?;
        if n < 3 {
            return Err(err(ln, format!("face with {n} corners")));
        }
        let idx: Vec<usize> = toks
            .take(n)
            .map(|t| {
                let i: usize = t
                    .parse()
                    .map_err(|_| err(ln, format!("non-numeric vertex index {t:?}")))?;
                if i >= nv {
                    return Err(err(ln, format!("vertex index {i} out of range ({nv} vertices)")));
                }
                Ok(i)
            })
            .collect::<Result<_>>()?;
        if idx.len() != n {
            return Err(err(ln, format!("face lists {} of {n} indices", idx.len())));
        }
        for j in 1..n - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    Ok(RawModel { vertices, faces })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RawModel> {
        parse_off(s, Path::new("test.off"))
    }

    #[test]
    fn minimal_file() {
        let m = parse("OFF\n1 0 0\n0 0 0\n").unwrap();
        assert_eq!(m.vertices, vec![[0.0, 0.0, 0.0]]);
        assert!(m.faces.is_empty());
    }

    #[test]
    fn tetrahedron() {
        let text = "OFF\n# tetra\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
        let m = parse(text).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]);
    }

    #[test]
    fn glued_header_and_quads() {
        let m = parse("OFF4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse("OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 9\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 7, .. }), "{e}");
        let e = parse("OFF\n1 0 0\n0 x 0\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(parse("PLY\n1 0 0\n0 0 0\n").is_err());
        assert!(parse("OFF\n2 0 0\n0 0 0\n").is_err());
    }
}
