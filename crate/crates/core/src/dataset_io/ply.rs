//! ASCII PLY for xyz-only clouds.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn to_ply_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 40);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    s
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_ply_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

/// Reads the x, y, z properties of the vertex element of an ASCII PLY file.
/// Other properties are skipped; elements after the vertices are ignored.
pub fn parse_ply(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing ply magic".into())),
    }
    let mut n_vertex = None;
    let mut before_vertex = 0usize;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = None;
    for (ln, l) in lines.by_ref() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(err(ln, format!("unsupported PLY format {fmt}")))
            }
            ["element", "vertex", n] => {
                n_vertex = Some(n.parse::<usize>().map_err(|_| err(ln, format!("bad vertex count {n:?}")))?);
                in_vertex = true;
            }
            ["element", _, n] => {
                if n_vertex.is_none() {
                    before_vertex += n.parse::<usize>().map_err(|_| err(ln, format!("bad element count {n:?}")))?;
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(err(ln, "list properties on vertices are not supported".into()))
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => {
                header_end = Some(ln);
                break;
            }
            _ => {}
        }
    }
    let header_end = header_end.ok_or_else(|| err(1, "missing end_header".into()))?;
    let n = n_vertex.ok_or_else(|| err(header_end, "no vertex element".into()))?;
    let pos = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| err(header_end, format!("vertex element lacks property {name}")))
    };
    let (ix, iy, iz) = (pos("x")?, pos("y")?, pos("z")?);
    let mut body = lines.filter(|(_, l)| !l.is_empty()).skip(before_vertex);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = body
            .next()
            .ok_or_else(|| err(header_end, format!("expected {n} vertices, file ended early")))?;
        let vals: Vec<&str> = l.split_whitespace().collect();
        if vals.len() < props.len() {
            return Err(err(ln, format!("expected {} values", props.len())));
        }
        let num = |i: usize| {
            vals[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(ln, format!("non-numeric value {:?}", vals[i])))
        };
        points.push([num(ix)?, num(iy)?, num(iz)?]);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = PointCloud::new(vec![[0.5, -1.25, 3.0], [1e-3, 2.0, 63.0]]).unwrap();
        let s = to_ply_string(&c);
        assert!(s.contains("element vertex 2\n"));
        assert_eq!(parse_ply(&s, Path::new("x.ply")).unwrap(), c);
    }

    #[test]
    fn extra_properties_and_faces() {
        let s = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float nx\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n9 1 2 3\n9 4 5 6\n3 0 1 1\n";
        let c = parse_ply(s, Path::new("x.ply")).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn rejects_binary() {
        let s = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n";
        assert!(parse_ply(s, Path::new("x.ply")).is_err());
    }
}
