use aoisnn::inference::threshold_grid;
use aoisnn::{Error, Result};

/// Parses `lo:hi:n`, plain values and `inf`, comma separated, in order.
pub fn parse(text: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| Error::Config { field: "thresholds".into(), msg };
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let fields: Vec<&str> = part.split(':').collect();
        match fields.as_slice() {
            [v] => out.push(value(v).ok_or_else(|| bad(format!("`{part}` is not a threshold")))?),
            [lo, hi, n] => {
                let (lo, hi) = match (value(lo), value(hi)) {
                    (Some(lo), Some(hi)) if lo.is_finite() && hi.is_finite() && lo <= hi => (lo, hi),
                    _ => return Err(bad(format!("`{part}` needs finite lo <= hi"))),
                };
                let n: usize = n
                    .parse()
                    .ok()
                    .filter(|&n| n >= 1)
                    .ok_or_else(|| bad(format!("`{part}` needs a point count >= 1")))?;
                out.extend(threshold_grid(lo, hi, n));
            }
            _ => return Err(bad(format!("`{part}` is neither lo:hi:n nor a value"))),
        }
    }
    if out.is_empty() {
        return Err(bad("no thresholds given".into()));
    }
    Ok(out)
}

fn value(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = if s.eq_ignore_ascii_case("inf") { f64::INFINITY } else { s.parse().ok()? };
    (v >= 0.0).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_values_and_infinity() {
        let g = parse("0.8:1.0:20").unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[19]), (0.8, 1.0));
        assert_eq!(parse("inf").unwrap(), vec![f64::INFINITY]);
        assert_eq!(parse("0, 0.5,inf").unwrap(), vec![0.0, 0.5, f64::INFINITY]);
    }

    #[test]
    fn rejects_malformed() {
        for s in ["", "abc", "1:0:5", "0:1", "0:1:0", "-1", "0:inf:3"] {
            assert!(matches!(parse(s), Err(Error::Config { .. })), "{s}");
        }
    }
}
