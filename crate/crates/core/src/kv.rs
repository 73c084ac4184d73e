//! Flat `key = value` text shared by the calibration, config and session
//! formats. Blank lines and `#` comments are ignored; line numbers are
//! 1-based.

use crate::error::{Error, Result};

pub fn entries(text: &str) -> Result<Vec<(&str, &str, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(Error::Parse {
                line,
                message: format!("expected `key = value`, found `{body}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty key".into(),
            });
        }
        out.push((k, v, line));
    }
    Ok(out)
}

pub fn parse_f64(value: &str, line: usize) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected a finite number, found `{value}`"),
        })
}

pub fn parse_usize(value: &str, line: usize) -> Result<usize> {
    value.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a non-negative integer, found `{value}`"),
    })
}

pub fn parse_u64(value: &str, line: usize) -> Result<u64> {
    value.parse::<u64>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a non-negative integer, found `{value}`"),
    })
}
