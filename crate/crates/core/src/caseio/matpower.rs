//! Declarative subset of the MATPOWER case-file format (version 2).
//!
//! Accepted statements: an optional `function mpc = name` header,
//! `mpc.version`, `mpc.baseMVA`, numeric matrix literals `mpc.<name> = [...];`,
//! and the `mpc.bus_name` cell array of strings. Any other `mpc.<name> = ...;`
//! statement is kept verbatim. `%` starts a comment.

use super::CaseIoError;

pub const BUS_COLS: usize = 13;
pub const GEN_COLS: usize = 21;
pub const BRANCH_COLS: usize = 13;
const GEN_MIN_COLS: usize = 10;
const BRANCH_MIN_COLS: usize = 11;

pub type Matrix = Vec<Vec<f64>>;

/// An `mpc.<name>` statement outside the modelled tables, stored as written
/// (from `mpc.` up to and including the terminating `;`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawStatement {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseDocument {
    pub function_name: Option<String>,
    pub version: String,
    pub base_mva: f64,
    pub bus: Matrix,
    pub gen: Matrix,
    pub branch: Matrix,
    pub gencost: Option<Matrix>,
    pub bus_name: Option<Vec<String>>,
    pub extra: Vec<RawStatement>,
}

impl CaseDocument {
    pub fn new(base_mva: f64) -> Self {
        CaseDocument {
            function_name: None,
            version: "2".into(),
            base_mva,
            bus: Vec::new(),
            gen: Vec::new(),
            branch: Vec::new(),
            gencost: None,
            bus_name: None,
            extra: Vec::new(),
        }
    }

    /// Checks column counts and cross-table lengths.
    pub fn check(&self) -> Result<(), CaseIoError> {
        let table = |name: &str, m: &Matrix, min: usize| -> Result<(), CaseIoError> {
            for (i, row) in m.iter().enumerate() {
                if row.len() < min {
                    return Err(CaseIoError::Structure(format!(
                        "{name} row {} has {} columns, need at least {min}",
                        i + 1,
                        row.len()
                    )));
                }
            }
            Ok(())
        };
        table("bus", &self.bus, BUS_COLS)?;
        table("gen", &self.gen, GEN_COLS)?;
        table("branch", &self.branch, BRANCH_COLS)?;
        if let Some(gc) = &self.gencost {
            table("gencost", gc, 4)?;
            if !gc.is_empty() && gc.len() != self.gen.len() && gc.len() != 2 * self.gen.len() {
                return Err(CaseIoError::Structure(format!(
                    "gencost has {} rows for {} generators",
                    gc.len(),
                    self.gen.len()
                )));
            }
        }
        if let Some(names) = &self.bus_name {
            if names.len() != self.bus.len() {
                return Err(CaseIoError::Structure(format!(
                    "bus_name has {} entries for {} buses",
                    names.len(),
                    self.bus.len()
                )));
            }
        }
        Ok(())
    }
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let a = v.abs();
    if v.fract() == 0.0 && a < 1e15 {
        format!("{}", v as i64)
    } else if (1e-5..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

const BUS_HEADER: &str = "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin";
const GEN_HEADER: &str = "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\tPc1\tPc2\tQc1min\tQc1max\tQc2min\tQc2max\tramp_agc\tramp_10\tramp_30\tramp_q\tapf";
const BRANCH_HEADER: &str =
    "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax";
const GENCOST_HEADER: &str = "%\t2\tstartup\tshutdown\tn\tc(n-1)\t...\tc0";

fn emit_matrix(out: &mut String, name: &str, m: &Matrix) {
    out.push_str("mpc.");
    out.push_str(name);
    out.push_str(" = [\n");
    for row in m {
        for v in row {
            out.push('\t');
            out.push_str(&format_number(*v));
        }
        out.push_str(";\n");
    }
    out.push_str("];\n");
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Deterministic text rendering; one matrix row per line.
pub fn emit_case(doc: &CaseDocument) -> String {
    let mut out = String::new();
    if let Some(name) = &doc.function_name {
        out.push_str(&format!("function mpc = {name}\n"));
    }
    out.push_str(&format!("mpc.version = {};\n", quote(&doc.version)));
    out.push_str(&format!("mpc.baseMVA = {};\n", format_number(doc.base_mva)));

    out.push_str("\n%% bus data\n");
    out.push_str(BUS_HEADER);
    out.push('\n');
    emit_matrix(&mut out, "bus", &doc.bus);

    out.push_str("\n%% generator data\n");
    out.push_str(GEN_HEADER);
    out.push('\n');
    emit_matrix(&mut out, "gen", &doc.gen);

    out.push_str("\n%% branch data\n");
    out.push_str(BRANCH_HEADER);
    out.push('\n');
    emit_matrix(&mut out, "branch", &doc.branch);

    if let Some(gc) = &doc.gencost {
        out.push_str("\n%% generator cost data\n");
        out.push_str(GENCOST_HEADER);
        out.push('\n');
        emit_matrix(&mut out, "gencost", gc);
    }

    if let Some(names) = &doc.bus_name {
        out.push_str("\n%% bus names\nmpc.bus_name = {\n");
        for n in names {
            out.push('\t');
            out.push_str(&quote(n));
            out.push_str(";\n");
        }
        out.push_str("};\n");
    }

    for raw in &doc.extra {
        out.push('\n');
        out.push_str(&raw.text);
        out.push('\n');
    }
    out
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Cursor {
            src,
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> CaseIoError {
        CaseIoError::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    /// Skips whitespace (including newlines) and comments.
    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '%' {
                self.skip_comment();
            } else if c.is_whitespace() {
                self.bump();
            } else if self.src[self.pos..].starts_with("...") {
                // line continuation
                self.skip_comment();
            } else {
                break;
            }
        }
    }

    /// Skips spaces, tabs and commas but stops at newlines.
    fn skip_inline(&mut self) {
        while let Some(c) = self.peek() {
            if c == ' ' || c == '\t' || c == '\r' || c == ',' {
                self.bump();
            } else if self.src[self.pos..].starts_with("...") {
                self.skip_comment();
                self.bump();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.src[self.pos..].starts_with(s) {
            for _ in s.chars() {
                self.bump();
            }
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), CaseIoError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<String, CaseIoError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.err("expected identifier"));
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn string(&mut self) -> Result<String, CaseIoError> {
        let quote_char = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(self.err("expected string literal")),
        };
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.err("unterminated string")),
                Some(c) if c == quote_char => {
                    if self.peek() == Some(quote_char) {
                        self.bump();
                        s.push(c);
                    } else {
                        return Ok(s);
                    }
                }
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<f64, CaseIoError> {
        let (line, col) = (self.line, self.col);
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '-') {
                // a sign is only part of the token at its start or after an exponent marker
                if matches!(c, '+' | '-') && self.pos > start {
                    let prev = self.src[..self.pos].chars().last().unwrap();
                    if prev != 'e' && prev != 'E' {
                        break;
                    }
                }
                self.bump();
            } else {
                break;
            }
        }
        let tok = &self.src[start..self.pos];
        let (sign, body) = match tok.strip_prefix('-') {
            Some(rest) => (-1.0, rest),
            None => (1.0, tok.strip_prefix('+').unwrap_or(tok)),
        };
        let value = match body {
            "Inf" | "inf" => Some(f64::INFINITY),
            "NaN" | "nan" => Some(f64::NAN),
            _ if body.starts_with(|c: char| c.is_ascii_digit() || c == '.') => body.parse::<f64>().ok(),
            _ => None,
        };
        match value {
            Some(v) => Ok(sign * v),
            None => Err(CaseIoError::Parse {
                line,
                col,
                msg: format!("non-numeric cell `{tok}`"),
            }),
        }
    }

    fn matrix(&mut self) -> Result<Matrix, CaseIoError> {
        self.expect("[")?;
        let mut rows: Matrix = Vec::new();
        let mut row: Vec<f64> = Vec::new();
        let (mut first_line, mut first_col) = (self.line, self.col);
        loop {
            self.skip_inline();
            match self.peek() {
                None => return Err(self.err("unterminated matrix literal")),
                Some('%') => self.skip_comment(),
                Some(';') | Some('\n') => {
                    self.bump();
                    if !row.is_empty() {
                        if let Some(prev) = rows.first() {
                            if prev.len() != row.len() {
                                return Err(CaseIoError::Parse {
                                    line: first_line,
                                    col: first_col,
                                    msg: format!(
                                        "row has {} columns, expected {}",
                                        row.len(),
                                        prev.len()
                                    ),
                                });
                            }
                        }
                        rows.push(std::mem::take(&mut row));
                    }
                }
                Some(']') => {
                    self.bump();
                    if !row.is_empty() {
                        if let Some(prev) = rows.first() {
                            if prev.len() != row.len() {
                                return Err(self.err("inconsistent row length"));
                            }
                        }
                        rows.push(row);
                    }
                    return Ok(rows);
                }
                Some(_) => {
                    if row.is_empty() {
                        first_line = self.line;
                        first_col = self.col;
                    }
                    row.push(self.number()?);
                }
            }
        }
    }

    fn cell_of_strings(&mut self) -> Result<Vec<String>, CaseIoError> {
        self.expect("{")?;
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            match self.peek() {
                None => return Err(self.err("unterminated cell array")),
                Some('}') => {
                    self.bump();
                    return Ok(out);
                }
                Some(';') | Some(',') => {
                    self.bump();
                }
                Some('\'') | Some('"') => out.push(self.string()?),
                Some(c) => return Err(self.err(format!("unexpected `{c}` in cell array"))),
            }
        }
    }

    /// Consumes a value with balanced brackets and quotes up to the `;`.
    fn raw_value(&mut self) -> Result<(), CaseIoError> {
        let mut depth = 0i32;
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated statement")),
                Some('\'') | Some('"') => {
                    self.string()?;
                }
                Some('%') => self.skip_comment(),
                Some('[') | Some('{') | Some('(') => {
                    depth += 1;
                    self.bump();
                }
                Some(']') | Some('}') | Some(')') => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(self.err("unbalanced bracket"));
                    }
                    self.bump();
                }
                Some(';') if depth == 0 => return Ok(()),
                Some('\n') if depth == 0 => return Err(self.err("expected `;`")),
                Some(_) => {
                    self.bump();
                }
            }
        }
    }

    fn end_statement(&mut self) -> Result<(), CaseIoError> {
        self.skip_inline();
        self.expect(";")
    }
}

/// Parses case text into a document; short gen/branch rows are padded to the
/// version 2 column counts.
pub fn parse_case(text: &str) -> Result<CaseDocument, CaseIoError> {
    let mut cur = Cursor::new(text);
    let mut doc = CaseDocument::new(f64::NAN);
    let mut seen_base = false;
    let (mut bus, mut gen, mut branch) = (None, None, None);

    loop {
        cur.skip_trivia();
        if cur.peek().is_none() {
            break;
        }
        if cur.eat("function") {
            cur.skip_inline();
            cur.expect("mpc")?;
            cur.skip_inline();
            cur.expect("=")?;
            cur.skip_inline();
            doc.function_name = Some(cur.ident()?);
            continue;
        }
        let stmt_start = cur.pos;
        cur.expect("mpc.")
            .map_err(|_| cur.err("expected `mpc.<field> = ...;` statement"))?;
        let name = cur.ident()?;
        cur.skip_inline();
        cur.expect("=")?;
        cur.skip_inline();
        match name.as_str() {
            "version" => {
                doc.version = match cur.peek() {
                    Some('\'') | Some('"') => cur.string()?,
                    _ => format_number(cur.number()?),
                };
                cur.end_statement()?;
            }
            "baseMVA" => {
                doc.base_mva = cur.number()?;
                seen_base = true;
                cur.end_statement()?;
            }
            "bus" | "gen" | "branch" | "gencost" => {
                let m = cur.matrix()?;
                cur.end_statement()?;
                match name.as_str() {
                    "bus" => bus = Some(m),
                    "gen" => gen = Some(m),
                    "branch" => branch = Some(m),
                    _ => doc.gencost = Some(m),
                }
            }
            "bus_name" => {
                doc.bus_name = Some(cur.cell_of_strings()?);
                cur.end_statement()?;
            }
            _ => {
                cur.raw_value()?;
                cur.expect(";")?;
                doc.extra.push(RawStatement {
                    name,
                    text: text[stmt_start..cur.pos].to_string(),
                });
            }
        }
    }

    if !seen_base {
        return Err(CaseIoError::Structure("missing mpc.baseMVA".into()));
    }
    let missing = |t: &str| CaseIoError::Structure(format!("missing mpc.{t} table"));
    doc.bus = bus.ok_or_else(|| missing("bus"))?;
    doc.gen = gen.ok_or_else(|| missing("gen"))?;
    doc.branch = branch.ok_or_else(|| missing("branch"))?;
    pad(&mut doc.gen, "gen", GEN_MIN_COLS, &[0.0; GEN_COLS])?;
    let mut branch_defaults = [0.0; BRANCH_COLS];
    branch_defaults[11] = -360.0;
    branch_defaults[12] = 360.0;
    pad(&mut doc.branch, "branch", BRANCH_MIN_COLS, &branch_defaults)?;
    doc.check()?;
    Ok(doc)
}

fn pad(m: &mut Matrix, name: &str, min: usize, defaults: &[f64]) -> Result<(), CaseIoError> {
    for (i, row) in m.iter_mut().enumerate() {
        if row.len() < min {
            return Err(CaseIoError::Structure(format!(
                "{name} row {} has {} columns, need at least {min}",
                i + 1,
                row.len()
            )));
        }
        while row.len() < defaults.len() {
            row.push(defaults[row.len()]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [1 3 0 0 0 0 1 1 0 10 1 1.1 0.9];
mpc.gen = [1 0 0 10 -10 1 100 1 10 0];
mpc.branch = zeros(0, 13);
";

    #[test]
    fn smallest_legal_file() {
        // `zeros(0, 13)` is not a literal, so the minimal file uses an empty matrix instead
        let text = MINIMAL.replace("zeros(0, 13)", "[]");
        let doc = parse_case(&text).unwrap();
        assert_eq!(doc.base_mva, 100.0);
        assert_eq!(doc.bus.len(), 1);
        assert_eq!(doc.gen[0].len(), GEN_COLS);
        assert!(doc.branch.is_empty());
    }

    #[test]
    fn scripting_is_rejected() {
        let err = parse_case(MINIMAL).unwrap_err();
        assert!(matches!(err, CaseIoError::Parse { line: 5, .. }), "{err:?}");
    }

    #[test]
    fn comments_are_whitespace() {
        let plain = MINIMAL.replace("zeros(0, 13)", "[]");
        let commented = format!(
            "% header comment\n{}",
            plain
                .replace("mpc.bus = [", "% the bus table\nmpc.bus = [ % inline\n")
                .replace("];\nmpc.gen", "]; % trailing\nmpc.gen")
        );
        assert_eq!(parse_case(&plain).unwrap(), parse_case(&commented).unwrap());
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let text = MINIMAL
            .replace("zeros(0, 13)", "[]")
            .replace("1 3 0 0 0 0 1 1 0 10 1 1.1 0.9", "1 3 0 abc 0 0 1 1 0 10 1 1.1 0.9");
        match parse_case(&text).unwrap_err() {
            CaseIoError::Parse { line, col, msg } => {
                assert_eq!((line, col), (3, 18));
                assert!(msg.contains("abc"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn ragged_matrix_rejected() {
        let text = MINIMAL
            .replace("zeros(0, 13)", "[]")
            .replace("mpc.gen = [1 0 0 10 -10 1 100 1 10 0]", "mpc.gen = [1 0 0 10 -10 1 100 1 10 0; 1 2]");
        assert!(matches!(parse_case(&text).unwrap_err(), CaseIoError::Parse { .. }));
    }

    #[test]
    fn missing_table_is_structural() {
        let text = "mpc.baseMVA = 100;\nmpc.bus = [];\nmpc.gen = [];\n";
        assert!(matches!(parse_case(text).unwrap_err(), CaseIoError::Structure(m) if m.contains("branch")));
    }

    #[test]
    fn unknown_tables_kept_verbatim() {
        let text = MINIMAL.replace("zeros(0, 13)", "[]")
            + "mpc.areas = [\n\t1\t5;  % odd spacing\n];\nmpc.info = {'a', 'b;c'};\n";
        let doc = parse_case(&text).unwrap();
        assert_eq!(doc.extra.len(), 2);
        assert_eq!(doc.extra[0].text, "mpc.areas = [\n\t1\t5;  % odd spacing\n];");
        assert_eq!(doc.extra[1].text, "mpc.info = {'a', 'b;c'};");
        let again = parse_case(&emit_case(&doc)).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn special_numbers_round_trip() {
        for v in [0.0, -0.0, 1.0, -3.0, 0.1, 1.03, 1e-7, -2.5e-12, 1e20, 123456.789, f64::INFINITY, f64::NEG_INFINITY] {
            let s = format_number(v);
            let mut c = Cursor::new(&s);
            let back = c.number().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s}");
        }
        assert_eq!(format_number(1.0 + 3.0 * 0.01), "1.03");
        assert_eq!(format_number(100.0), "100");
    }

    #[test]
    fn bus_names_with_quotes() {
        let mut doc = parse_case(&MINIMAL.replace("zeros(0, 13)", "[]")).unwrap();
        doc.bus_name = Some(vec!["it's".into()]);
        let text = emit_case(&doc);
        assert!(text.contains("'it''s'"));
        assert_eq!(parse_case(&text).unwrap(), doc);
    }
}
