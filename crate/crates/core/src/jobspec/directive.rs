use serde::{Deserialize, Serialize};

use super::{Dialect, ParseError};

/// One scheduler option taken from a directive line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub key: String,
    pub value: String,
    /// 1-based line number in the script.
    pub line_no: usize,
}

/// Splits script text into lines, accepting LF or CRLF endings.
pub fn split_lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

pub fn detect_dialect(script_text: &str) -> Result<Dialect, ParseError> {
    let mut pbs = false;
    let mut slurm = false;
    for line in split_lines(script_text) {
        pbs |= line.starts_with(Dialect::Pbs.prefix());
        slurm |= line.starts_with(Dialect::Slurm.prefix());
    }
    match (pbs, slurm) {
        (true, true) => Err(ParseError::MixedDialects),
        (true, false) => Ok(Dialect::Pbs),
        (false, true) => Ok(Dialect::Slurm),
        (false, false) => Err(ParseError::NoDirectives),
    }
}

/// Separates directive lines of `dialect` from the rest of the script.
///
/// Every other line, including the shebang, comments and blank lines, lands
/// in the returned body unchanged and in order.
pub fn parse_directives(
    script_text: &str,
    dialect: Dialect,
) -> Result<(Vec<Directive>, Vec<String>), ParseError> {
    let prefix = dialect.prefix();
    let mut directives = Vec::new();
    let mut body = Vec::new();
    for (idx, line) in split_lines(script_text).into_iter().enumerate() {
        let line_no = idx + 1;
        match line.strip_prefix(prefix) {
            Some(rest) => {
                let before = directives.len();
                match dialect {
                    Dialect::Pbs => parse_pbs_line(rest, line_no, &mut directives)?,
                    Dialect::Slurm => parse_slurm_line(rest, line_no, &mut directives)?,
                }
                if directives.len() == before {
                    return Err(ParseError::MalformedDirective { line: line_no });
                }
            }
            None => body.push(line.to_string()),
        }
    }
    Ok((directives, body))
}

/// Tokens up to an inline `#` comment.
fn tokens(rest: &str) -> Vec<&str> {
    rest.split_whitespace()
        .take_while(|t| !t.starts_with('#'))
        .collect()
}

fn is_key(key: &str) -> bool {
    !key.is_empty()
        && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !key.starts_with('-')
}

fn parse_pbs_line(rest: &str, line_no: usize, out: &mut Vec<Directive>) -> Result<(), ParseError> {
    let malformed = ParseError::MalformedDirective { line: line_no };
    let toks = tokens(rest);
    let mut i = 0;
    while i < toks.len() {
        let key = toks[i].strip_prefix('-').ok_or_else(|| malformed.clone())?;
        if !is_key(key) {
            return Err(malformed);
        }
        let value = match toks.get(i + 1) {
            Some(v) if !v.starts_with('-') => {
                i += 1;
                *v
            }
            _ => "",
        };
        i += 1;
        if key == "l" {
            for item in value.split(',').filter(|s| !s.is_empty()) {
                out.push(Directive {
                    key: key.to_string(),
                    value: item.to_string(),
                    line_no,
                });
            }
            if value.split(',').all(str::is_empty) {
                return Err(malformed);
            }
        } else {
            out.push(Directive {
                key: key.to_string(),
                value: value.to_string(),
                line_no,
            });
        }
    }
    Ok(())
}

fn parse_slurm_line(
    rest: &str,
    line_no: usize,
    out: &mut Vec<Directive>,
) -> Result<(), ParseError> {
    let malformed = ParseError::MalformedDirective { line: line_no };
    let toks = tokens(rest);
    let mut i = 0;
    while i < toks.len() {
        let tok = toks[i];
        i += 1;
        let (key, inline_value) = if let Some(long) = tok.strip_prefix("--") {
            match long.split_once('=') {
                Some((k, v)) => (k, Some(v)),
                None => (long, None),
            }
        } else if let Some(short) = tok.strip_prefix('-') {
            // `-t30` style short options carry their value inline.
            let mut chars = short.chars();
            let first = chars.next().ok_or_else(|| malformed.clone())?;
            let tail = chars.as_str();
            let key_len = first.len_utf8();
            (&short[..key_len], (!tail.is_empty()).then_some(tail.trim_start_matches('=')))
        } else {
            return Err(malformed);
        };
        if !is_key(key) {
            return Err(malformed);
        }
        let value = match inline_value {
            Some(v) => v,
            None => match toks.get(i) {
                Some(v) if !v.starts_with('-') => {
                    i += 1;
                    *v
                }
                _ => "",
            },
        };
        out.push(Directive {
            key: key.to_string(),
            value: value.to_string(),
            line_no,
        });
    }
    Ok(())
}
