use std::collections::HashMap;

use thiserror::Error;

use crate::model::{ModelError, ScorePanel};
use crate::weights::LinearConstraint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}, column {column}: `{value}` is not a number")]
    NotANumber { line: usize, column: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn line_error(line: usize, message: impl Into<String>) -> InputError {
    InputError::Line {
        line,
        message: message.into(),
    }
}

/// Parses the long-format panel CSV
///
/// ```text
/// alternative,indicator,c1,c2,...
/// d1,u1,55,86,...
/// ```
///
/// Alternatives and indicators keep their first-appearance order; every
/// alternative must list every indicator exactly once.
pub fn parse_panel(content: &str) -> Result<ScorePanel, InputError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(content.as_bytes());
    let mut records = reader.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| InputError::Invalid(e.to_string()))?,
        None => return Err(InputError::Invalid("empty panel file".into())),
    };
    if header.len() < 3 {
        return Err(line_error(1, "header needs `alternative,indicator` and at least one expert"));
    }
    let experts: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let m = experts.len();

    let mut alternatives: Vec<String> = Vec::new();
    let mut indicators: Vec<String> = Vec::new();
    let mut cells: HashMap<(usize, usize), (usize, Vec<f64>)> = HashMap::new();

    for rec in records {
        let rec = rec.map_err(|e| InputError::Invalid(e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != m + 2 {
            return Err(line_error(
                line,
                format!("expected {} fields, found {}", m + 2, rec.len()),
            ));
        }
        let alt = rec[0].to_string();
        let ind = rec[1].to_string();
        if alt.is_empty() || ind.is_empty() {
            return Err(line_error(line, "missing alternative or indicator label"));
        }
        let ai = position_or_push(&mut alternatives, alt);
        let ii = position_or_push(&mut indicators, ind);
        let mut values = Vec::with_capacity(m);
        for (j, field) in rec.iter().skip(2).enumerate() {
            let value: f64 = field.parse().map_err(|_| InputError::NotANumber {
                line,
                column: experts[j].clone(),
                value: field.to_string(),
            })?;
            if !value.is_finite() {
                return Err(InputError::NotANumber {
                    line,
                    column: experts[j].clone(),
                    value: field.to_string(),
                });
            }
            values.push(value);
        }
        if let Some((first, _)) = cells.insert((ai, ii), (line, values)) {
            return Err(line_error(
                line,
                format!(
                    "duplicate entry for ({}, {}), first given on line {first}",
                    alternatives[ai], indicators[ii]
                ),
            ));
        }
    }
    if cells.is_empty() {
        return Err(InputError::Invalid("panel has no score rows".into()));
    }

    let mut scores = Vec::with_capacity(alternatives.len() * indicators.len() * m);
    for (ai, alt) in alternatives.iter().enumerate() {
        for (ii, ind) in indicators.iter().enumerate() {
            let (_, values) = cells
                .get(&(ai, ii))
                .ok_or_else(|| InputError::Invalid(format!("missing scores for ({alt}, {ind})")))?;
            scores.extend_from_slice(values);
        }
    }
    Ok(ScorePanel::new(alternatives, indicators, experts, scores)?)
}

fn position_or_push(labels: &mut Vec<String>, label: String) -> usize {
    match labels.iter().position(|l| *l == label) {
        Some(i) => i,
        None => {
            labels.push(label);
            labels.len() - 1
        }
    }
}

/// Writes a panel in the format read by [`parse_panel`].
pub fn write_panel(panel: &ScorePanel) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["alternative".to_string(), "indicator".to_string()];
    header.extend(panel.experts().iter().cloned());
    writer.write_record(&header).expect("in-memory write");
    for (i, alt) in panel.alternatives().iter().enumerate() {
        for (k, ind) in panel.indicators().iter().enumerate() {
            let mut row = vec![alt.clone(), ind.clone()];
            row.extend((0..panel.num_experts()).map(|j| format!("{:?}", panel.score(i, k, j))));
            writer.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Relation {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Relation {
    fn strict(self) -> bool {
        matches!(self, Relation::Gt | Relation::Lt)
    }

    fn lower_bound(self) -> bool {
        matches!(self, Relation::Ge | Relation::Gt)
    }
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.text[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.text[self.pos..].chars().next().map_or(1, char::len_utf8);
        }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    /// `w(<label>)`
    fn weight(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let rest = self.rest();
        let inner = rest.strip_prefix("w(")?;
        let close = inner.find(')')?;
        self.pos += 2 + close + 1;
        Some(inner[..close].trim())
    }

    fn relation(&mut self) -> Option<Relation> {
        for (token, rel) in [(">=", Relation::Ge), ("<=", Relation::Le), (">", Relation::Gt), ("<", Relation::Lt)] {
            if self.eat(token) {
                return Some(rel);
            }
        }
        None
    }

    fn number(&mut self) -> Option<f64> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')))
            .unwrap_or(rest.len());
        let value = rest[..end].parse().ok()?;
        self.pos += end;
        Some(value)
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.rest().is_empty()
    }
}

/// Parses one constraint per line:
///
/// ```text
/// w(c4) >= w(c2)
/// w(c1) > w(c3) + 0.01
/// w(c1) >= 0.2
/// ```
///
/// Strict relations are tightened by `margin`, so with the default margin of
/// zero `>` behaves like `>=`. Blank lines and `#` comments are skipped.
pub fn parse_constraints(text: &str, experts: &[String], margin: f64) -> Result<Vec<LinearConstraint>, InputError> {
    let m = experts.len();
    let index_of = |label: &str, line: usize| {
        experts
            .iter()
            .position(|e| e == label)
            .ok_or_else(|| line_error(line, format!("unknown expert `{label}`")))
    };
    let mut constraints = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut cur = Cursor { text: body, pos: 0 };
        let lhs = cur
            .weight()
            .ok_or_else(|| line_error(line, "expected `w(<label>)` on the left"))?;
        let lhs = index_of(lhs, line)?;
        let rel = cur
            .relation()
            .ok_or_else(|| line_error(line, "expected one of >=, <=, >, <"))?;

        // lhs  rel  rhs_weight + constant
        let mut coefficients = vec![0.0; m];
        coefficients[lhs] = 1.0;
        let constant;
        if let Some(rhs) = cur.weight() {
            let rhs = index_of(rhs, line)?;
            if rhs == lhs {
                return Err(line_error(line, "constraint compares a weight with itself"));
            }
            coefficients[rhs] -= 1.0;
            constant = if cur.eat("+") {
                cur.number().ok_or_else(|| line_error(line, "expected a number after `+`"))?
            } else if cur.eat("-") {
                -cur.number().ok_or_else(|| line_error(line, "expected a number after `-`"))?
            } else {
                0.0
            };
        } else {
            constant = cur
                .number()
                .ok_or_else(|| line_error(line, "expected `w(<label>)` or a number on the right"))?;
        }
        if !cur.at_end() {
            return Err(line_error(line, format!("unexpected trailing input `{}`", cur.rest())));
        }
        let extra = if rel.strict() { margin } else { 0.0 };
        // a·w ≥ c  or  −a·w ≥ −c
        let constraint = if rel.lower_bound() {
            LinearConstraint::new(coefficients, constant + extra)
        } else {
            LinearConstraint::new(coefficients.iter().map(|a| -a).collect(), -constant + extra)
        };
        constraints.push(constraint);
    }
    Ok(constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::REFERENCE_PANEL_CSV;

    fn labels(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn reference_panel_shape() {
        let panel = parse_panel(REFERENCE_PANEL_CSV).unwrap();
        assert_eq!(panel.num_alternatives(), 5);
        assert_eq!(panel.num_indicators(), 6);
        assert_eq!(panel.num_experts(), 7);
        assert_eq!(panel.score(0, 0, 0), 55.0);
        assert_eq!(panel.score(1, 0, 0), 97.0);
        assert_eq!(panel.experts()[3], "c4");
    }

    #[test]
    fn single_cell_panel() {
        let panel = parse_panel("alternative,indicator,c1\nd1,u1,42\n").unwrap();
        assert_eq!(panel.scores(), &[42.0]);
    }

    #[test]
    fn non_numeric_cell_names_line_and_column() {
        let err = parse_panel("alternative,indicator,c1,c2\nd1,u1,55,abc\n").unwrap_err();
        assert_eq!(
            err,
            InputError::NotANumber {
                line: 2,
                column: "c2".into(),
                value: "abc".into()
            }
        );
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn ragged_duplicate_and_missing_rows() {
        let err = parse_panel("alternative,indicator,c1,c2\nd1,u1,1\n").unwrap_err();
        assert!(matches!(err, InputError::Line { line: 2, .. }));
        let err = parse_panel("alternative,indicator,c1\nd1,u1,1\nd1,u1,2\n").unwrap_err();
        assert!(matches!(err, InputError::Line { line: 3, .. }));
        let err = parse_panel("alternative,indicator,c1\nd1,u1,1\nd2,u2,2\n").unwrap_err();
        assert!(matches!(err, InputError::Invalid(_)));
        assert!(parse_panel("").is_err());
        assert!(parse_panel("alternative,indicator,c1\n").is_err());
        let err = parse_panel("alternative,indicator,c1,c1\nd1,u1,1,2\n").unwrap_err();
        assert!(matches!(err, InputError::Model(ModelError::DuplicateLabel { .. })));
    }

    #[test]
    fn write_then_parse_is_exact() {
        let panel = parse_panel("alternative,indicator,a,b\nx,p,0.1,2.5e-3\nx,q,-7,1e300\n").unwrap();
        let again = parse_panel(&write_panel(&panel)).unwrap();
        assert_eq!(panel, again);
    }

    #[test]
    fn constraint_forms() {
        let experts = labels(4);
        let cs = parse_constraints(
            "w(c4) >= w(c2)\n# comment\n\nw(c1) >= 0.2\nw(c2) <= 0.5\nw(c1) > w(c3) + 0.01\nw(c3) < w(c2) - 0.1",
            &experts,
            0.0,
        )
        .unwrap();
        assert_eq!(cs.len(), 5);
        assert_eq!(cs[0], LinearConstraint::new(vec![0.0, -1.0, 0.0, 1.0], 0.0));
        assert_eq!(cs[1], LinearConstraint::new(vec![1.0, 0.0, 0.0, 0.0], 0.2));
        assert_eq!(cs[2], LinearConstraint::new(vec![0.0, -1.0, 0.0, 0.0], -0.5));
        assert_eq!(cs[3], LinearConstraint::new(vec![1.0, 0.0, -1.0, 0.0], 0.01));
        // w3 < w2 − 0.1  ⇔  w2 − w3 ≥ 0.1
        assert_eq!(cs[4], LinearConstraint::new(vec![0.0, 1.0, -1.0, 0.0], 0.1));
    }

    #[test]
    fn strict_margin() {
        let cs = parse_constraints("w(c1) > w(c2)\nw(c1) < 0.5", &labels(2), 0.05).unwrap();
        assert_eq!(cs[0].rhs, 0.05);
        assert_eq!(cs[1], LinearConstraint::new(vec![-1.0, 0.0], -0.5 + 0.05));
    }

    #[test]
    fn constraint_errors() {
        let experts = labels(2);
        for bad in ["w(c9) >= 0.1", "w(c1) = 0.1", "w(c1) >=", "c1 >= 0.1", "w(c1) >= w(c1)", "w(c1) >= 0.1 extra"] {
            assert!(parse_constraints(bad, &experts, 0.0).is_err(), "{bad}");
        }
        let err = parse_constraints("w(c1) >= 0\nw(zz) >= 0", &experts, 0.0).unwrap_err();
        assert!(matches!(err, InputError::Line { line: 2, .. }));
    }
}
