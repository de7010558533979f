//! MPL source files: one statement per physical line.
//!
//! ```text
//! mytid -> v              spawn "name" -> v        initsend
//! pack expr               send dest, tag           recv tag
//! unpack v                set v = expr             if expr goto N
//! print "text"(, item)*   exit code
//! ```
//!
//! `#` starts a comment. A line may carry a leading `N:` label, which must
//! equal its physical line number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::expr::Expr;

pub type Line = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrintItem {
    Text(String),
    Value(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    MyTid { var: String },
    Spawn { program: String, var: String },
    InitSend,
    Pack(Expr),
    Send { dest: Expr, tag: Expr },
    Recv { tag: Expr },
    Unpack { var: String },
    Set { var: String, value: Expr },
    IfGoto { cond: Expr, target: Line },
    Print(Vec<PrintItem>),
    Exit { code: Expr },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("line {line}: syntax error: {reason}")]
    Syntax { line: Line, reason: String },
    #[error("line {line}: goto target {target} is not a statement line")]
    BadGoto { line: Line, target: Line },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub source_path: PathBuf,
    pub lines: BTreeMap<Line, Stmt>,
    source: String,
}

impl Program {
    /// Parses `source`; `name` identifies the program and names the
    /// default source file `<name>.mpl`.
    pub fn parse(source: &str, name: &str) -> Result<Program, ProgramError> {
        let mut lines = BTreeMap::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx as Line + 1;
            if let Some(stmt) = parse_line(raw, line)? {
                lines.insert(line, stmt);
            }
        }
        for (&line, stmt) in &lines {
            if let Stmt::IfGoto { target, .. } = stmt {
                if !lines.contains_key(target) {
                    return Err(ProgramError::BadGoto { line, target: *target });
                }
            }
        }
        Ok(Program {
            name: name.to_string(),
            source_path: PathBuf::from(format!("{name}.mpl")),
            lines,
            source: source.to_string(),
        })
    }

    pub fn with_source_path(mut self, path: impl AsRef<Path>) -> Self {
        self.source_path = path.as_ref().to_path_buf();
        self
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// File name component of the source path, as shown by `info-line`.
    pub fn file_name(&self) -> String {
        self.source_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{}.mpl", self.name))
    }

    pub fn stmt(&self, line: Line) -> Option<&Stmt> {
        self.lines.get(&line)
    }

    pub fn is_statement(&self, line: Line) -> bool {
        self.lines.contains_key(&line)
    }

    /// Line of the first statement, or the end position for an empty program.
    pub fn entry(&self) -> Line {
        self.lines.keys().next().copied().unwrap_or(1)
    }

    /// One past the last statement.
    pub fn end(&self) -> Line {
        self.lines.keys().next_back().map(|l| l + 1).unwrap_or(1)
    }

    /// The statement line following `line`, or [`Program::end`].
    pub fn next_after(&self, line: Line) -> Line {
        self.lines
            .range(line + 1..)
            .next()
            .map(|(l, _)| *l)
            .unwrap_or_else(|| self.end())
    }
}

fn parse_line(raw: &str, line: Line) -> Result<Option<Stmt>, ProgramError> {
    let err = |reason: String| ProgramError::Syntax { line, reason };
    let text = strip_comment(raw).trim();
    let text = strip_label(text, line).map_err(err)?;
    if text.is_empty() {
        return Ok(None);
    }
    let (keyword, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let expr = |s: &str| Expr::parse(s).map_err(|e| err(e.to_string()));
    let stmt = match keyword {
        "mytid" => Stmt::MyTid { var: arrow_target(rest).map_err(err)? },
        "spawn" => {
            let (lit, after) = take_string(rest).map_err(err)?;
            Stmt::Spawn { program: lit, var: arrow_target(after.trim()).map_err(err)? }
        }
        "initsend" if rest.is_empty() => Stmt::InitSend,
        "initsend" => return Err(err("initsend takes no operands".into())),
        "pack" => Stmt::Pack(expr(rest)?),
        "send" => {
            let parts = split_top_level(rest).map_err(err)?;
            if parts.len() != 2 {
                return Err(err("expected `send dest, tag`".into()));
            }
            Stmt::Send { dest: expr(parts[0])?, tag: expr(parts[1])? }
        }
        "recv" => Stmt::Recv { tag: expr(rest)? },
        "unpack" => Stmt::Unpack { var: identifier(rest).map_err(err)? },
        "set" => {
            let (var, value) = rest
                .split_once('=')
                .ok_or_else(|| err("expected `set v = expr`".into()))?;
            Stmt::Set { var: identifier(var.trim()).map_err(err)?, value: expr(value)? }
        }
        "if" => {
            let (cond, target) = split_goto(rest).ok_or_else(|| err("expected `if expr goto N`".into()))?;
            let target = target
                .parse::<Line>()
                .map_err(|_| err(format!("bad goto target `{target}`")))?;
            Stmt::IfGoto { cond: expr(cond)?, target }
        }
        "print" => {
            let mut items = Vec::new();
            for part in split_top_level(rest).map_err(err)? {
                if part.starts_with('"') {
                    let (lit, after) = take_string(part).map_err(err)?;
                    if !after.trim().is_empty() {
                        return Err(err("text after string literal".into()));
                    }
                    items.push(PrintItem::Text(lit));
                } else {
                    items.push(PrintItem::Value(expr(part)?));
                }
            }
            if items.is_empty() {
                return Err(err("print needs at least one operand".into()));
            }
            Stmt::Print(items)
        }
        "exit" => Stmt::Exit { code: expr(rest)? },
        other => return Err(err(format!("unknown statement `{other}`"))),
    };
    Ok(Some(stmt))
}

fn strip_comment(raw: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            '#' if !in_string => return &raw[..i],
            _ => {}
        }
    }
    raw
}

fn strip_label(text: &str, line: Line) -> Result<&str, String> {
    let digits = text.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || !text[digits..].starts_with(':') {
        return Ok(text);
    }
    let label: Line = text[..digits].parse().map_err(|_| format!("bad label `{}`", &text[..digits]))?;
    if label != line {
        return Err(format!("label {label} does not match physical line {line}"));
    }
    Ok(text[digits + 1..].trim())
}

fn identifier(text: &str) -> Result<String, String> {
    let mut chars = text.chars();
    let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(text.to_string())
    } else {
        Err(format!("`{text}` is not an identifier"))
    }
}

fn arrow_target(text: &str) -> Result<String, String> {
    let rest = text
        .strip_prefix("->")
        .ok_or_else(|| format!("expected `-> variable`, found `{text}`"))?;
    identifier(rest.trim())
}

/// Parses a leading double-quoted literal, returning it and the remainder.
fn take_string(text: &str) -> Result<(String, &str), String> {
    let body = text
        .strip_prefix('"')
        .ok_or_else(|| format!("expected string literal, found `{text}`"))?;
    let mut out = String::new();
    let mut chars = body.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Ok((out, &body[i + 1..])),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, c @ ('"' | '\\'))) => out.push(c),
                Some((_, c)) => return Err(format!("unknown escape `\\{c}`")),
                None => break,
            },
            c => out.push(c),
        }
    }
    Err("unterminated string literal".into())
}

/// Splits on commas outside parentheses and string literals.
fn split_top_level(text: &str) -> Result<Vec<&str>, String> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    let (mut in_string, mut escaped) = (false, false);
    for (i, c) in text.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            '(' if !in_string => depth += 1,
            ')' if !in_string => depth -= 1,
            ',' if !in_string && depth == 0 => {
                parts.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = text[start..].trim();
    if !last.is_empty() || !parts.is_empty() {
        parts.push(last);
    }
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty operand".into());
    }
    Ok(parts)
}

fn split_goto(text: &str) -> Option<(&str, &str)> {
    let idx = text.rfind("goto")?;
    let before = &text[..idx];
    if !before.ends_with(char::is_whitespace) {
        return None;
    }
    Some((before.trim(), text[idx + 4..].trim()))
}
