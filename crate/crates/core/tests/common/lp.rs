//! Strict reader for the CPLEX LP subset the emitter produces: comment
//! header, objective, constraints, bounds, binaries, end. Anything outside
//! the grammar is an error with its line number.

use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub sense: String,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpFile {
    pub comment: Option<String>,
    pub minimize: bool,
    pub objective: Vec<(String, f64)>,
    pub rows: Vec<LpRow>,
    pub bounds: BTreeMap<String, (f64, f64)>,
    pub binaries: Vec<String>,
}

#[derive(PartialEq, Clone, Copy, Debug)]
enum Section {
    Start,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Done,
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    let first_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E');
    first_ok && s.len() <= 255 && s.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c))
}

fn number(s: &str, line: usize) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("line {line}: '{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("line {line}: non-finite number '{s}'"))
    }
}

/// `[sign] coef name` repeated; the first sign may be omitted.
fn terms(tokens: &[&str], line: usize) -> Result<Vec<(String, f64)>, String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let sign = match tokens[i] {
            "+" => {
                i += 1;
                1.0
            }
            "-" => {
                i += 1;
                -1.0
            }
            _ if out.is_empty() => 1.0,
            t => return Err(format!("line {line}: expected sign, got '{t}'")),
        };
        let coef = number(tokens.get(i).ok_or(format!("line {line}: dangling sign"))?, line)?;
        let name = tokens.get(i + 1).ok_or(format!("line {line}: coefficient without variable"))?;
        if !is_name(name) {
            return Err(format!("line {line}: bad variable name '{name}'"));
        }
        if coef < 0.0 {
            return Err(format!("line {line}: signed magnitude '{coef}'"));
        }
        out.push((name.to_string(), sign * coef));
        i += 2;
    }
    Ok(out)
}

/// Joins continuation lines (indented, no label) onto the labelled line.
fn logical_lines<'a>(lines: &[(usize, &'a str)]) -> Result<Vec<(usize, String)>, String> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for &(n, l) in lines {
        if l.contains(':') {
            out.push((n, l.to_string()));
        } else if let Some(last) = out.last_mut() {
            last.1.push(' ');
            last.1.push_str(l.trim());
        } else {
            return Err(format!("line {n}: continuation without a labelled line"));
        }
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<LpFile, String> {
    if !text.ends_with('\n') {
        return Err("file does not end with a newline".into());
    }
    let mut lp = LpFile::default();
    let mut section = Section::Start;
    let mut objective_lines = Vec::new();
    let mut row_lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        if raw.trim().is_empty() {
            return Err(format!("line {n}: blank line"));
        }
        if let Some(c) = raw.strip_prefix('\\') {
            if section != Section::Start || lp.comment.is_some() {
                return Err(format!("line {n}: comment outside the header"));
            }
            lp.comment = Some(c.trim().to_string());
            continue;
        }
        let keyword = match raw {
            "Minimize" | "Maximize" if section == Section::Start => Some(Section::Objective),
            "Subject To" if section == Section::Objective => Some(Section::Constraints),
            "Bounds" if matches!(section, Section::Objective | Section::Constraints) => Some(Section::Bounds),
            "Binaries" if section == Section::Bounds => Some(Section::Binaries),
            "End" if matches!(section, Section::Bounds | Section::Binaries) => Some(Section::Done),
            _ => None,
        };
        if let Some(next) = keyword {
            if raw == "Minimize" || raw == "Maximize" {
                lp.minimize = raw == "Minimize";
            }
            section = next;
            continue;
        }
        if !raw.starts_with(' ') {
            return Err(format!("line {n}: unexpected '{raw}' in {section:?}"));
        }
        match section {
            Section::Objective => objective_lines.push((n, raw)),
            Section::Constraints => row_lines.push((n, raw)),
            Section::Bounds => {
                let t: Vec<&str> = raw.split_whitespace().collect();
                let (name, lo, hi) = match t.as_slice() {
                    [lo, "<=", name, "<=", hi] => (*name, number(lo, n)?, number(hi, n)?),
                    [name, ">=", lo] => (*name, number(lo, n)?, f64::INFINITY),
                    _ => return Err(format!("line {n}: malformed bound '{raw}'")),
                };
                if !is_name(name) || lo > hi {
                    return Err(format!("line {n}: bad bound for '{name}'"));
                }
                if lp.bounds.insert(name.to_string(), (lo, hi)).is_some() {
                    return Err(format!("line {n}: duplicate bound for '{name}'"));
                }
            }
            Section::Binaries => {
                for name in raw.split_whitespace() {
                    if !is_name(name) {
                        return Err(format!("line {n}: bad binary name '{name}'"));
                    }
                    lp.binaries.push(name.to_string());
                }
            }
            _ => return Err(format!("line {n}: content in {section:?}")),
        }
    }
    if section != Section::Done {
        return Err("missing End".into());
    }

    let obj = logical_lines(&objective_lines)?;
    if obj.len() != 1 {
        return Err(format!("expected one objective, found {}", obj.len()));
    }
    let (n, line) = &obj[0];
    let (label, body) = line.split_once(':').expect("labelled");
    if !is_name(label.trim()) {
        return Err(format!("line {n}: bad objective label"));
    }
    lp.objective = terms(&body.split_whitespace().collect::<Vec<_>>(), *n)?;

    let mut names = BTreeSet::new();
    for (n, line) in logical_lines(&row_lines)? {
        let (label, body) = line.split_once(':').expect("labelled");
        let name = label.trim();
        if !is_name(name) || !names.insert(name.to_string()) {
            return Err(format!("line {n}: bad or duplicate row name '{name}'"));
        }
        let t: Vec<&str> = body.split_whitespace().collect();
        let k = t.iter().position(|s| matches!(*s, "<=" | ">=" | "=")).ok_or(format!("line {n}: no sense"))?;
        if k + 2 != t.len() {
            return Err(format!("line {n}: expected a single right-hand side"));
        }
        let row_terms = terms(&t[..k], n)?;
        if row_terms.is_empty() {
            return Err(format!("line {n}: empty row"));
        }
        lp.rows.push(LpRow { name: name.to_string(), terms: row_terms, sense: t[k].to_string(), rhs: number(t[k + 1], n)? });
    }
    let distinct: BTreeSet<&String> = lp.binaries.iter().collect();
    if distinct.len() != lp.binaries.len() {
        return Err("duplicate binary declaration".into());
    }
    if let Some(b) = lp.binaries.iter().find(|b| lp.bounds.contains_key(*b)) {
        return Err(format!("binary '{b}' also has a continuous bound"));
    }
    Ok(lp)
}
