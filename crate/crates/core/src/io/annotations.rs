//! Ground-truth files: one `frame_index cx cy w h` line per frame, pixels.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tracking::TargetBox;

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub frame_index: usize,
    pub target: TargetBox,
}

pub fn parse(text: &str, origin: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: idx + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let frame_index = fields[0]
            .parse::<usize>()
            .map_err(|e| err(format!("frame index: {e}")))?;
        let mut v = [0.0; 4];
        for (i, name) in ["cx", "cy", "w", "h"].iter().enumerate() {
            v[i] = fields[i + 1]
                .parse::<f64>()
                .map_err(|e| err(format!("{name}: {e}")))?;
        }
        let target = TargetBox::new(v[0], v[1], v[2], v[3]).map_err(|e| err(e.to_string()))?;
        out.push(Annotation {
            frame_index,
            target,
        });
    }
    Ok(out)
}

pub fn format(annotations: &[Annotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        let t = &a.target;
        let _ = writeln!(out, "{} {} {} {} {}", a.frame_index, t.cx, t.cy, t.w, t.h);
    }
    out
}

pub fn read(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, &path.display().to_string())
}

pub fn write(path: &Path, annotations: &[Annotation]) -> Result<()> {
    std::fs::write(path, format(annotations)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        let text = "# gt\n0 10.5 20 8 6\n1  11 21.25 8 6\n";
        let a = parse(text, "gt.txt").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].target.cy, 21.25);
        assert_eq!(parse(&format(&a), "x").unwrap(), a);
    }

    #[test]
    fn errors_carry_line() {
        let e = parse("0 1 2 3 4\n1 1 2 3\n", "gt.txt").unwrap_err().to_string();
        assert!(e.starts_with("gt.txt:2"), "{e}");
        assert!(parse("0 1 2 -3 4\n", "gt.txt").is_err());
    }
}
