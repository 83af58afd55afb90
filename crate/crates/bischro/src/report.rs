//! Serialization helpers shared by the identity batteries and the CLI.
//!
//! Every floating-point number leaving the laboratory is rendered with 17
//! significant digits so that artifacts are byte-stable across runs and
//! round-trip to the same bits.

use serde::Serialize;
use std::io;

/// Canonical float rendering: 17 significant digits, scientific.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

struct Float17;

impl serde_json::ser::Formatter for Float17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        writer.write_all(fmt_float(value).as_bytes())
    }
}

/// JSON with [`fmt_float`] applied to every float, newline terminated.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Float17);
    value
        .serialize(&mut ser)
        .expect("serialization of report types cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        let x = std::f64::consts::PI;
        let rendered = fmt_float(x);
        assert_eq!(rendered.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn json_floats_use_the_canonical_rendering() {
        #[derive(Serialize)]
        struct Row {
            t: f64,
            name: &'static str,
        }
        let s = to_json_string(&Row { t: 0.5, name: "x" });
        assert_eq!(s, "{\"t\":5.0000000000000000e-1,\"name\":\"x\"}\n");
    }
}
