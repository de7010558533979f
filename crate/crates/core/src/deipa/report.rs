use crate::minipvm::Line;
use crate::service::When;

pub const BEGIN: &str = "pth_manager: *** begin of process threads' list ***";
pub const END: &str = "pth_manager: *** end of process thread's list ***";

/// Where a process was last parked by Deipa.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub when: When,
    pub line: Line,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub vid: u32,
    pub prev: Option<Position>,
    pub actual: Option<Position>,
}

fn position(p: Option<Position>) -> String {
    match p {
        Some(p) => format!("[bptype={:>2} line={:>3}]", p.when.code(), p.line),
        None => "[bptype=NULL line=NULL]".to_string(),
    }
}

pub fn row_line(row: &ReportRow) -> String {
    format!("({:>2}) prev={} actual={}", row.vid, position(row.prev), position(row.actual))
}

/// Process list framed by the banner lines.
pub fn render(rows: &[ReportRow]) -> Vec<String> {
    let mut out = vec![BEGIN.to_string()];
    out.extend(rows.iter().map(row_line));
    out.push(END.to_string());
    out
}

pub fn setvar_line(var: &str, value: &str) -> String {
    format!("set_all_vars_func: setvar {var}={value}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_formats() {
        let rows = [
            ReportRow {
                vid: 1,
                prev: Some(Position { when: When::Before, line: 17 }),
                actual: Some(Position { when: When::Before, line: 28 }),
            },
            ReportRow { vid: 2, prev: None, actual: None },
        ];
        assert_eq!(
            render(&rows),
            vec![
                BEGIN.to_string(),
                "( 1) prev=[bptype= 1 line= 17] actual=[bptype= 1 line= 28]".to_string(),
                "( 2) prev=[bptype=NULL line=NULL] actual=[bptype=NULL line=NULL]".to_string(),
                END.to_string(),
            ]
        );
        assert_eq!(render(&[]), vec![BEGIN.to_string(), END.to_string()]);
        assert_eq!(setvar_line("value", "1"), "set_all_vars_func: setvar value=1");
    }
}
