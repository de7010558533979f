//! TeSS behavior specifications: the start program, the spawn table that
//! names every process by a virtual id (vid), and the ordered list of
//! global breakpoints Deipa drives the application through.
//!
//! ```text
//! tess   := "START_FILE:" ident
//!           "SPAWN_TABLE:" "{" row ("," row)* "}"
//!           "INITIAL:" (gbp ("," gbp)*)? ";"
//! row    := int int int int int ident ident int int
//! gbp    := "[" "{" lbp ("," lbp)* "}" "]"
//! lbp    := "(" int "," int "," int ("," action)* ")"
//! action := "[" int "," int "," string "," string "]"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::minipvm::{Line, Program, Stmt};
use crate::service::When;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TessSpec {
    pub start_file: String,
    pub spawn_rows: Vec<SpawnRow>,
    pub global_bps: Vec<GlobalBp>,
}

/// One spawn-table row. Only `parent_vid`, `vid`, `program` and
/// `source_file` mean anything here; the other columns are carried along.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpawnRow {
    pub index: i64,
    pub spawn_line: i64,
    pub reserved: i64,
    pub parent_vid: u32,
    pub vid: u32,
    pub program: String,
    pub source_file: String,
    pub checksum: i64,
    pub tail: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalBp {
    pub when: When,
    pub vid: u32,
    pub line: Line,
    pub actions: Vec<SetVarAction>,
}

/// `[code, vid, "var", "value"]`; code 2 sets a variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetVarAction {
    pub code: i64,
    pub vid: u32,
    pub var: String,
    pub value: String,
}

pub const SET_VARIABLE: i64 = 2;

impl SetVarAction {
    pub fn int_value(&self) -> i64 {
        self.value.trim().parse().expect("validated at parse time")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GlobalBp {
    pub locals: Vec<LocalBp>,
}

impl GlobalBp {
    pub fn local(&self, vid: u32) -> Option<&LocalBp> {
        self.locals.iter().find(|l| l.vid == vid)
    }

    pub fn actions(&self) -> impl Iterator<Item = &SetVarAction> {
        self.locals.iter().flat_map(|l| l.actions.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TessError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("inconsistent specification: {0}")]
    Consistency(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(i64),
    Str(String),
    Punct(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Punct(c) => write!(f, "`{c}`"),
        }
    }
}

fn word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | '-')
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, TessError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '{' | '}' | '[' | ']' | '(' | ')' | ',' | ';' | ':' => {
                out.push((line, Tok::Punct(c)));
                chars.next();
            }
            '"' => {
                let start = line;
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(TessError::Syntax { line: start, reason: "unterminated string".into() }),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(e @ ('"' | '\\')) => s.push(e),
                            Some(e) => {
                                return Err(TessError::Syntax { line, reason: format!("bad escape `\\{e}`") })
                            }
                            None => return Err(TessError::Syntax { line: start, reason: "unterminated string".into() }),
                        },
                        Some(ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                        }
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            c if word_char(c) => {
                let mut w = String::new();
                while let Some(&ch) = chars.peek().filter(|ch| word_char(**ch)) {
                    w.push(ch);
                    chars.next();
                }
                let tok = match w.parse::<i64>() {
                    Ok(i) => Tok::Int(i),
                    Err(_) => Tok::Word(w),
                };
                out.push((line, tok));
            }
            other => return Err(TessError::Syntax { line, reason: format!("unexpected character `{other}`") }),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |(l, _)| *l)
    }

    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, TessError> {
        Err(TessError::Syntax { line: self.line(), reason: reason.into() })
    }

    fn next(&mut self, what: &str) -> Result<Tok, TessError> {
        match self.toks.get(self.pos) {
            Some((_, t)) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.fail(format!("expected {what}, found end of file")),
        }
    }

    fn peek_punct(&self, c: char) -> bool {
        matches!(self.toks.get(self.pos), Some((_, Tok::Punct(p))) if *p == c)
    }

    fn punct(&mut self, c: char) -> Result<(), TessError> {
        match self.next(&format!("`{c}`"))? {
            Tok::Punct(p) if p == c => Ok(()),
            other => {
                self.pos -= 1;
                self.fail(format!("expected `{c}`, found {other}"))
            }
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), TessError> {
        match self.next(kw)? {
            Tok::Word(w) if w == kw => self.punct(':'),
            other => {
                self.pos -= 1;
                self.fail(format!("expected `{kw}:`, found {other}"))
            }
        }
    }

    fn int(&mut self, what: &str) -> Result<i64, TessError> {
        match self.next(what)? {
            Tok::Int(i) => Ok(i),
            other => {
                self.pos -= 1;
                self.fail(format!("expected {what}, found {other}"))
            }
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, TessError> {
        match self.next(what)? {
            Tok::Word(w) => Ok(w),
            other => {
                self.pos -= 1;
                self.fail(format!("expected {what}, found {other}"))
            }
        }
    }

    fn string(&mut self, what: &str) -> Result<String, TessError> {
        match self.next(what)? {
            Tok::Str(s) => Ok(s),
            other => {
                self.pos -= 1;
                self.fail(format!("expected {what}, found {other}"))
            }
        }
    }

    fn vid(&mut self, what: &str) -> Result<u32, TessError> {
        let v = self.int(what)?;
        u32::try_from(v).or_else(|_| self.fail(format!("{what} {v} out of range")))
    }

    fn row(&mut self) -> Result<SpawnRow, TessError> {
        Ok(SpawnRow {
            index: self.int("row index")?,
            spawn_line: self.int("spawn line")?,
            reserved: self.int("row field")?,
            parent_vid: self.vid("parent vid")?,
            vid: self.vid("vid")?,
            program: self.ident("program name")?,
            source_file: self.ident("source file")?,
            checksum: self.int("row field")?,
            tail: self.int("row field")?,
        })
    }

    fn action(&mut self) -> Result<SetVarAction, TessError> {
        self.punct('[')?;
        let code = self.int("action code")?;
        self.punct(',')?;
        let vid = self.vid("vid")?;
        self.punct(',')?;
        let var = self.string("variable name")?;
        self.punct(',')?;
        let value = self.string("value")?;
        self.punct(']')?;
        Ok(SetVarAction { code, vid, var, value })
    }

    fn local(&mut self) -> Result<(LocalBp, i64), TessError> {
        self.punct('(')?;
        let when = self.int("breakpoint type")?;
        self.punct(',')?;
        let vid = self.vid("vid")?;
        self.punct(',')?;
        let line = self.int("line")?;
        let line = Line::try_from(line).or_else(|_| self.fail(format!("line {line} out of range")))?;
        let mut actions = Vec::new();
        while self.peek_punct(',') {
            self.punct(',')?;
            actions.push(self.action()?);
        }
        self.punct(')')?;
        let placeholder = When::Before;
        Ok((LocalBp { when: When::from_code(when).unwrap_or(placeholder), vid, line, actions }, when))
    }

    fn global(&mut self) -> Result<(GlobalBp, Vec<i64>), TessError> {
        self.punct('[')?;
        self.punct('{')?;
        let mut locals = Vec::new();
        let mut codes = Vec::new();
        loop {
            let (l, code) = self.local()?;
            locals.push(l);
            codes.push(code);
            if !self.peek_punct(',') {
                break;
            }
            self.punct(',')?;
        }
        self.punct('}')?;
        self.punct(']')?;
        Ok((GlobalBp { locals }, codes))
    }
}

/// Parses and checks a TeSS text.
pub fn parse_tess(text: &str) -> Result<TessSpec, TessError> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0 };
    p.keyword("START_FILE")?;
    let start_file = p.ident("start program")?;

    p.keyword("SPAWN_TABLE")?;
    p.punct('{')?;
    let mut spawn_rows = vec![p.row()?];
    while p.peek_punct(',') {
        p.punct(',')?;
        spawn_rows.push(p.row()?);
    }
    p.punct('}')?;

    p.keyword("INITIAL")?;
    let mut global_bps = Vec::new();
    let mut when_codes = Vec::new();
    if !p.peek_punct(';') {
        loop {
            let (g, codes) = p.global()?;
            global_bps.push(g);
            when_codes.push(codes);
            if !p.peek_punct(',') {
                break;
            }
            p.punct(',')?;
        }
    }
    p.punct(';')?;
    if p.pos < p.toks.len() {
        return p.fail(format!("trailing {}", p.toks[p.pos].1));
    }

    let spec = TessSpec { start_file, spawn_rows, global_bps };
    check(&spec, &when_codes)?;
    Ok(spec)
}

fn inconsistent<T>(msg: String) -> Result<T, TessError> {
    Err(TessError::Consistency(msg))
}

fn check(spec: &TessSpec, when_codes: &[Vec<i64>]) -> Result<(), TessError> {
    let mut vids = BTreeSet::new();
    for row in &spec.spawn_rows {
        if row.vid == 0 {
            return inconsistent("vid 0 is reserved for the root's parent".into());
        }
        if !vids.insert(row.vid) {
            return inconsistent(format!("vid {} appears in two spawn rows", row.vid));
        }
    }
    let roots: Vec<&SpawnRow> = spec.spawn_rows.iter().filter(|r| r.parent_vid == 0).collect();
    match roots.as_slice() {
        [root] if root.program == spec.start_file => {}
        [root] => {
            return inconsistent(format!("root row runs `{}`, start file is `{}`", root.program, spec.start_file))
        }
        _ => return inconsistent(format!("{} spawn rows have parent vid 0, expected one", roots.len())),
    }
    for row in &spec.spawn_rows {
        if row.parent_vid != 0 && !vids.contains(&row.parent_vid) {
            return inconsistent(format!("vid {} has unknown parent vid {}", row.vid, row.parent_vid));
        }
    }
    for (i, (g, codes)) in spec.global_bps.iter().zip(when_codes).enumerate() {
        let n = i + 1;
        let mut seen = BTreeSet::new();
        for (l, code) in g.locals.iter().zip(codes) {
            if When::from_code(*code).is_none() {
                return inconsistent(format!("global breakpoint #{n}: breakpoint type {code} is neither 1 nor 2"));
            }
            if !vids.contains(&l.vid) {
                return inconsistent(format!("global breakpoint #{n}: unknown vid {}", l.vid));
            }
            if !seen.insert(l.vid) {
                return inconsistent(format!("global breakpoint #{n}: two local breakpoints for vid {}", l.vid));
            }
            if l.line == 0 {
                return inconsistent(format!("global breakpoint #{n}: line 0"));
            }
            for a in &l.actions {
                if !vids.contains(&a.vid) {
                    return inconsistent(format!("global breakpoint #{n}: action on unknown vid {}", a.vid));
                }
                if a.value.trim().parse::<i64>().is_err() {
                    return inconsistent(format!("global breakpoint #{n}: value {:?} is not an integer", a.value));
                }
            }
        }
    }
    Ok(())
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical text form. The result ends with the closing `;`.
pub fn serialize_tess(spec: &TessSpec) -> String {
    let mut out = String::new();
    let _ = write!(out, "START_FILE:\n    {}\n\nSPAWN_TABLE:\n    {{\n", spec.start_file);
    for (i, r) in spec.spawn_rows.iter().enumerate() {
        let sep = if i + 1 < spec.spawn_rows.len() { "," } else { "" };
        let _ = writeln!(
            out,
            "        {} {} {} {} {} {} {} {} {}{sep}",
            r.index, r.spawn_line, r.reserved, r.parent_vid, r.vid, r.program, r.source_file, r.checksum, r.tail
        );
    }
    out.push_str("    }\n\nINITIAL:\n");
    for (i, g) in spec.global_bps.iter().enumerate() {
        let locals: Vec<String> = g
            .locals
            .iter()
            .map(|l| {
                let mut s = format!("({},{},{}", l.when.code(), l.vid, l.line);
                for a in &l.actions {
                    let _ = write!(s, ",[{},{},{},{}]", a.code, a.vid, quote(&a.var), quote(&a.value));
                }
                s.push(')');
                s
            })
            .collect();
        let sep = if i + 1 < spec.global_bps.len() { "," } else { "" };
        let _ = writeln!(out, "    [{{ {} }}]{sep}", locals.join(","));
    }
    out.push(';');
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    UnknownProgram { vid: u32, program: String },
    NoStatement { gbp: usize, vid: u32, line: Line },
    UnknownActionCode { gbp: usize, code: i64 },
    SpawnedTooLate { gbp: usize, vid: u32 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::UnknownProgram { vid, program } => write!(f, "vid {vid}: program `{program}` not found"),
            Warning::NoStatement { gbp, vid, line } => {
                write!(f, "global breakpoint #{gbp}: vid {vid} has no statement at line {line}")
            }
            Warning::UnknownActionCode { gbp, code } => write!(f, "global breakpoint #{gbp}: unknown action code {code}"),
            Warning::SpawnedTooLate { gbp, vid } => {
                write!(f, "global breakpoint #{gbp}: vid {vid} cannot have been spawned yet")
            }
        }
    }
}

/// Checks a specification against the programs it names. `programs` maps
/// program names to their parsed source.
pub fn validate(spec: &TessSpec, programs: &BTreeMap<String, Program>) -> Vec<Warning> {
    let mut warnings = Vec::new();
    let rows: BTreeMap<u32, &SpawnRow> = spec.spawn_rows.iter().map(|r| (r.vid, r)).collect();
    for r in &spec.spawn_rows {
        if !programs.contains_key(&r.program) {
            warnings.push(Warning::UnknownProgram { vid: r.vid, program: r.program.clone() });
        }
    }

    // Lines in the parent that spawn each child's program.
    let spawn_lines = |row: &SpawnRow| -> Vec<Line> {
        let parent = rows.get(&row.parent_vid).and_then(|p| programs.get(&p.program));
        parent
            .map(|p| {
                p.lines
                    .iter()
                    .filter(|(_, s)| matches!(s, Stmt::Spawn { program, .. } if *program == row.program))
                    .map(|(l, _)| *l)
                    .collect()
            })
            .unwrap_or_default()
    };
    // A vid is live once its parent has been taken past a spawn of it,
    // possibly in the same global breakpoint.
    let mut live: BTreeSet<u32> = spec.spawn_rows.iter().filter(|r| r.parent_vid == 0).map(|r| r.vid).collect();

    for (i, g) in spec.global_bps.iter().enumerate() {
        let n = i + 1;
        for r in &spec.spawn_rows {
            if live.contains(&r.vid) || !live.contains(&r.parent_vid) {
                continue;
            }
            let Some(pbp) = g.local(r.parent_vid) else { continue };
            let passed = spawn_lines(r).iter().any(|s| match pbp.when {
                When::Before => pbp.line > *s,
                When::After => pbp.line >= *s,
            });
            if passed {
                live.insert(r.vid);
            }
        }
        for l in &g.locals {
            if !live.contains(&l.vid) {
                warnings.push(Warning::SpawnedTooLate { gbp: n, vid: l.vid });
            }
            let program = rows.get(&l.vid).and_then(|r| programs.get(&r.program));
            if let Some(p) = program {
                if !p.is_statement(l.line) {
                    warnings.push(Warning::NoStatement { gbp: n, vid: l.vid, line: l.line });
                }
            }
            for a in &l.actions {
                if a.code != SET_VARIABLE {
                    warnings.push(Warning::UnknownActionCode { gbp: n, code: a.code });
                }
            }
        }
    }
    warnings
}
