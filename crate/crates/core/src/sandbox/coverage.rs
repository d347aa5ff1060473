//! Parsing of `gcov -b -c -n` summaries.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Percentages in [0, 100].
    pub line_pct: f64,
    pub branch_pct: f64,
    pub lines: u32,
    pub branches: u32,
}

#[derive(Default)]
struct Section {
    file: Option<String>,
    line: Option<(f64, u32)>,
    taken: Option<(f64, u32)>,
    executed: Option<(f64, u32)>,
    no_lines: bool,
    no_branches: bool,
}

impl Section {
    fn report(&self) -> Option<CoverageReport> {
        let (line_pct, lines) = match (self.line, self.no_lines) {
            (Some(l), _) => l,
            (None, true) => (100.0, 0),
            (None, false) => return None,
        };
        // Branch coverage counts a branch as covered when it was taken.
        let (branch_pct, branches) = match (self.taken.or(self.executed), self.no_branches) {
            (Some(b), _) => b,
            (None, _) => (100.0, 0),
        };
        Some(CoverageReport {
            line_pct,
            branch_pct,
            lines,
            branches,
        })
    }
}

fn pct_of(rest: &str) -> Option<(f64, u32)> {
    let (pct, total) = rest.split_once("% of ")?;
    Some((pct.trim().parse().ok()?, total.trim().parse().ok()?))
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Extracts the figures for `source_file` from a gcov summary. Sections for
/// other files (system headers) are ignored. Output without any `File`
/// header is treated as a single section.
pub fn parse_gcov_summary(text: &str, source_file: &str) -> Option<CoverageReport> {
    let mut sections: Vec<Section> = vec![Section::default()];
    for line in text.lines().map(str::trim) {
        if let Some(rest) = line.strip_prefix("File '") {
            sections.push(Section {
                file: Some(rest.trim_end_matches('\'').to_string()),
                ..Default::default()
            });
            continue;
        }
        let cur = sections.last_mut().expect("non-empty");
        if let Some(rest) = line.strip_prefix("Lines executed:") {
            // gcov repeats a bare total after the last section; keep the first.
            if cur.line.is_none() {
                cur.line = pct_of(rest);
            }
        } else if let Some(rest) = line.strip_prefix("Branches executed:") {
            cur.executed = pct_of(rest);
        } else if let Some(rest) = line.strip_prefix("Taken at least once:") {
            cur.taken = pct_of(rest);
        } else if line == "No executable lines" {
            cur.no_lines = true;
        } else if line == "No branches" {
            cur.no_branches = true;
        }
    }
    let wanted = file_name(source_file);
    if let Some(s) = sections
        .iter()
        .find(|s| s.file.as_deref().map(file_name) == Some(wanted))
    {
        return s.report();
    }
    if sections.len() == 1 && sections[0].line.is_some() {
        return sections[0].report();
    }
    None
}
