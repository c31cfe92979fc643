use crate::runtime::SessionRow;
use crate::sched::StatusRow;

pub const STATUS_HEADER: [&str; 6] = ["JOBID", "NAME", "ST", "NODESLOTS", "ELAPSED", "LIMIT"];
pub const SESSION_HEADER: [&str; 4] = ["NAME", "STATE", "ATTACHED", "PID"];

/// Left-aligned columns separated by two spaces, header first.
pub fn table<const N: usize>(header: [&str; N], rows: &[[String; N]]) -> String {
    let mut widths = header.map(str::len);
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let mut text = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                text.push_str("  ");
            }
            text.push_str(cell);
            text.extend(std::iter::repeat_n(' ', widths[i] - cell.chars().count()));
        }
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

pub fn status_cells(row: &StatusRow) -> [String; 6] {
    [
        row.id.to_string(),
        row.name.clone(),
        row.state.code().to_string(),
        row.node_slots(),
        row.elapsed_text(),
        row.limit_text(),
    ]
}

pub fn status_table(rows: &[StatusRow]) -> String {
    let cells: Vec<_> = rows.iter().map(status_cells).collect();
    table(STATUS_HEADER, &cells)
}

pub fn session_table(rows: &[SessionRow]) -> String {
    let cells: Vec<_> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                if r.live { "live" } else { "exited" }.to_string(),
                r.attached.to_string(),
                r.pid.to_string(),
            ]
        })
        .collect();
    table(SESSION_HEADER, &cells)
}

/// One JSON document per line.
pub fn json_lines<T: serde::Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::{JobId, JobState};

    fn row(id: u64, name: &str, state: JobState, elapsed: Option<u64>) -> StatusRow {
        StatusRow {
            id: JobId(id),
            name: name.into(),
            state,
            nodes: 1,
            slots_per_node: 8,
            elapsed_secs: elapsed,
            limit_secs: 14_400,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(status_table(&[]), "JOBID  NAME  ST  NODESLOTS  ELAPSED  LIMIT\n");
    }

    #[test]
    fn running_row() {
        let text = status_table(&[row(1, "automl_job", JobState::Running, Some(5))]);
        let line = text.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells, ["1", "automl_job", "R", "1x8", "0:00:05", "4:00:00"]);
    }

    #[test]
    fn columns_align() {
        let text = status_table(&[
            row(1, "a", JobState::Running, Some(5)),
            row(12, "longer_name", JobState::Pending, None),
        ]);
        let lines: Vec<&str> = text.lines().collect();
        let col = |l: &str| l.find("R ").or_else(|| l.find("PD")).unwrap();
        assert_eq!(lines[0].find("ST").unwrap(), col(lines[1]));
        assert_eq!(col(lines[1]), col(lines[2]));
        assert!(lines[2].ends_with("4:00:00"));
    }

    #[test]
    fn json_rows_round_trip() {
        let rows = vec![
            row(1, "x", JobState::Completed { exit_code: 0 }, Some(3)),
            row(2, "y", JobState::Failed { reason: "daemon-restart".into() }, Some(1)),
        ];
        let text = json_lines(&rows);
        let back: Vec<StatusRow> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, rows);
    }
}
