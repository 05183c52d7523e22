//! CSV helpers shared by every exporter: RFC-4180 quoting, LF endings and
//! numbers printed with 12 significant digits.

/// Formats `x` with 12 significant digits in scientific notation, trimming
/// trailing zeros of the mantissa.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{:.11e}", x);
    let (mant, exp) = s.split_once('e').expect("scientific format");
    let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
    if exp == "0" {
        mant.to_string()
    } else {
        format!("{mant}e{exp}")
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Accumulates a CSV document with a mandatory header.
#[derive(Debug, Clone)]
pub struct CsvTable {
    width: usize,
    out: String,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut out = header.iter().map(|h| quote(h)).collect::<Vec<_>>().join(",");
        out.push('\n');
        CsvTable { width: header.len(), out }
    }

    pub fn row(&mut self, fields: Vec<String>) {
        assert_eq!(fields.len(), self.width, "CSV row width must match the header");
        self.out.push_str(&fields.iter().map(|f| quote(f)).collect::<Vec<_>>().join(","));
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5e-6), "-2.5e-6");
        assert_eq!(fmt_num(std::f64::consts::PI), "3.14159265359");
        assert_eq!(fmt_num(1_256_637.0614359172), "1.25663706144e6");
        let back: f64 = fmt_num(1.0 / 3.0).parse().unwrap();
        assert!((back - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn quoting() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.row(vec!["x,y".into(), "say \"hi\"".into()]);
        assert_eq!(t.finish(), "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
    }
}
