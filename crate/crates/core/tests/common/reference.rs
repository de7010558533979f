//! Straight-line reference interpreter for the echo corpus, written
//! independently of the crate's runtime: its own line parser, expression
//! evaluator and round-robin scheduler. Used as the oracle for
//! breakpoint semantics.

use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub pc: u32,
    pub vars: BTreeMap<String, i64>,
    pub outbuf: Vec<i64>,
    pub inbuf: Vec<i64>,
}

/// One executed statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Executed {
    pub tid: u32,
    pub line: u32,
    pub before: Snapshot,
    pub after: Snapshot,
}

/// Sets `var` to `value` in `program` just before it executes `line`.
#[derive(Debug, Clone)]
pub struct Patch {
    pub program: &'static str,
    pub line: u32,
    pub var: &'static str,
    pub value: i64,
}

struct Task {
    program: &'static str,
    lines: BTreeMap<u32, String>,
    pc: u32,
    vars: BTreeMap<String, i64>,
    outbuf: Vec<i64>,
    inbuf: VecDeque<i64>,
    mailbox: VecDeque<(i64, Vec<i64>)>,
    done: bool,
}

impl Task {
    fn new(program: &'static str, source: &str) -> Task {
        let lines: BTreeMap<u32, String> = source
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let code = raw.split('#').next().unwrap().trim();
                (!code.is_empty()).then(|| (i as u32 + 1, code.to_string()))
            })
            .collect();
        let pc = *lines.keys().next().unwrap();
        Task { program, lines, pc, vars: BTreeMap::new(), outbuf: vec![], inbuf: VecDeque::new(), mailbox: VecDeque::new(), done: false }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot { pc: self.pc, vars: self.vars.clone(), outbuf: self.outbuf.clone(), inbuf: self.inbuf.iter().copied().collect() }
    }

    fn next_line(&self) -> u32 {
        self.lines.range(self.pc + 1..).next().map(|(l, _)| *l).unwrap_or(self.pc + 1)
    }

    fn eval(&self, text: &str) -> i64 {
        let toks = tokens(text);
        let mut pos = 0;
        let v = expr(&toks, &mut pos, &self.vars, 0);
        assert_eq!(pos, toks.len(), "trailing tokens in `{text}`");
        v
    }
}

fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if i + 1 < chars.len() && ["==", "!=", "<=", ">=", "&&", "||"].contains(&&*format!("{c}{}", chars[i + 1])) {
            out.push(format!("{c}{}", chars[i + 1]));
            i += 2;
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

const LEVELS: [&[&str]; 5] = [&["||"], &["&&"], &["==", "!=", "<", "<=", ">", ">="], &["+", "-"], &["*", "/", "%"]];

fn expr(t: &[String], pos: &mut usize, vars: &BTreeMap<String, i64>, level: usize) -> i64 {
    if level == LEVELS.len() {
        return unary(t, pos, vars);
    }
    let mut acc = expr(t, pos, vars, level + 1);
    while let Some(op) = t.get(*pos).filter(|op| LEVELS[level].contains(&op.as_str())).cloned() {
        *pos += 1;
        let rhs = expr(t, pos, vars, level + 1);
        acc = match op.as_str() {
            "||" => (acc != 0 || rhs != 0) as i64,
            "&&" => (acc != 0 && rhs != 0) as i64,
            "==" => (acc == rhs) as i64,
            "!=" => (acc != rhs) as i64,
            "<" => (acc < rhs) as i64,
            "<=" => (acc <= rhs) as i64,
            ">" => (acc > rhs) as i64,
            ">=" => (acc >= rhs) as i64,
            "+" => acc + rhs,
            "-" => acc - rhs,
            "*" => acc * rhs,
            "/" => acc / rhs,
            _ => acc % rhs,
        };
    }
    acc
}

fn unary(t: &[String], pos: &mut usize, vars: &BTreeMap<String, i64>) -> i64 {
    let tok = t[*pos].clone();
    *pos += 1;
    match tok.as_str() {
        "-" => -unary(t, pos, vars),
        "!" => (unary(t, pos, vars) == 0) as i64,
        "(" => {
            let v = expr(t, pos, vars, 0);
            assert_eq!(t[*pos], ")");
            *pos += 1;
            v
        }
        _ => tok.parse().unwrap_or_else(|_| *vars.get(&tok).unwrap_or_else(|| panic!("`{tok}` unset"))),
    }
}

fn after_arrow(code: &str) -> String {
    code.split("->").nth(1).unwrap().trim().to_string()
}

/// What happened when a task tried to run its current line.
enum Turn {
    Ran { spawned: Option<&'static str>, sent: Option<(u32, i64, Vec<i64>)>, output: Option<String> },
    Blocked,
}

fn run_line(task: &mut Task, tid: u32, next_tid: u32) -> Turn {
    let code = task.lines[&task.pc].clone();
    let (kw, rest) = code.split_once(' ').map(|(k, r)| (k, r.trim())).unwrap_or((code.as_str(), ""));
    let mut next = task.next_line();
    let mut turn = Turn::Ran { spawned: None, sent: None, output: None };
    match kw {
        "mytid" => {
            task.vars.insert(after_arrow(rest), tid as i64);
        }
        "spawn" => {
            let name = rest.split('"').nth(1).unwrap();
            let program = if name == "echo_server" { "echo_server" } else { "echo_client" };
            task.vars.insert(after_arrow(rest), next_tid as i64);
            turn = Turn::Ran { spawned: Some(program), sent: None, output: None };
        }
        "initsend" => task.outbuf.clear(),
        "pack" => {
            let v = task.eval(rest);
            task.outbuf.push(v);
        }
        "send" => {
            let (dest, tag) = rest.split_once(',').unwrap();
            let msg = (task.eval(dest) as u32, task.eval(tag), task.outbuf.clone());
            turn = Turn::Ran { spawned: None, sent: Some(msg), output: None };
        }
        "recv" => {
            let want = task.eval(rest);
            match task.mailbox.iter().position(|(tag, _)| want == -1 || *tag == want) {
                Some(i) => task.inbuf = task.mailbox.remove(i).unwrap().1.into(),
                None => return Turn::Blocked,
            }
        }
        "unpack" => {
            let v = task.inbuf.pop_front().expect("message has enough values");
            task.vars.insert(rest.to_string(), v);
        }
        "set" => {
            let (var, value) = rest.split_once('=').unwrap();
            let v = task.eval(value);
            task.vars.insert(var.trim().to_string(), v);
        }
        "if" => {
            let (cond, target) = rest.rsplit_once("goto").unwrap();
            if task.eval(cond) != 0 {
                next = target.trim().parse().unwrap();
            }
        }
        "print" => {
            let mut parts = Vec::new();
            for item in rest.split(',') {
                let item = item.trim();
                parts.push(match item.strip_prefix('"') {
                    Some(text) => text.trim_end_matches('"').to_string(),
                    None => task.eval(item).to_string(),
                });
            }
            turn = Turn::Ran { spawned: None, sent: None, output: Some(parts.join(" ")) };
        }
        "exit" => {
            task.done = true;
            return turn;
        }
        other => panic!("reference interpreter does not know `{other}`"),
    }
    task.pc = next;
    turn
}

/// Result of running the echo application to quiescence.
pub struct Run {
    pub trace: Vec<Executed>,
    pub outputs: Vec<(u32, String)>,
    /// Tasks left blocked, with the line they are stuck on.
    pub blocked: BTreeMap<u32, u32>,
}

pub fn run_echo(client: &str, server: &str, patch: Option<Patch>) -> Run {
    let sources = [("echo_client", client.to_string()), ("echo_server", server.to_string())];
    let source = |p: &str| sources.iter().find(|(n, _)| *n == p).unwrap().1.clone();
    let mut tasks: BTreeMap<u32, Task> = BTreeMap::new();
    tasks.insert(1, Task::new("echo_client", &source("echo_client")));
    let mut trace = Vec::new();
    let mut outputs = Vec::new();
    loop {
        let mut progressed = false;
        let tids: Vec<u32> = tasks.keys().copied().collect();
        for tid in tids {
            let next_tid = tasks.len() as u32 + 1;
            let task = tasks.get_mut(&tid).unwrap();
            if task.done {
                continue;
            }
            let line = task.pc;
            let before = task.snapshot();
            if let Some(p) = &patch {
                if p.program == task.program && p.line == line {
                    task.vars.insert(p.var.to_string(), p.value);
                }
            }
            match run_line(task, tid, next_tid) {
                Turn::Blocked => continue,
                Turn::Ran { spawned, sent, output } => {
                    trace.push(Executed { tid, line, before, after: task.snapshot() });
                    if let Some(text) = output {
                        outputs.push((tid, text));
                    }
                    if let Some(program) = spawned {
                        tasks.insert(next_tid, Task::new(program, &source(program)));
                    }
                    if let Some((dst, tag, payload)) = sent {
                        tasks.get_mut(&dst).unwrap().mailbox.push_back((tag, payload));
                    }
                    progressed = true;
                }
            }
        }
        if !progressed {
            let blocked = tasks.iter().filter(|(_, t)| !t.done).map(|(tid, t)| (*tid, t.pc)).collect();
            return Run { trace, outputs, blocked };
        }
    }
}
