//! Plain-text views of grids and loss traces, for debugging and plotting.

use std::fmt::Write as _;

use super::{CliError, GridContainer};
use crate::optim::LossRecord;

/// First line `# height=H width=W channels=C validity=0|1`, then a column
/// header and one `row,col,c0,…[,valid]` line per pixel.
pub fn grid_to_csv(grid: &GridContainer) -> String {
    let has_valid = grid.validity.is_some();
    let mut out = format!(
        "# height={} width={} channels={} validity={}\nrow,col",
        grid.height, grid.width, grid.channels, has_valid as u8
    );
    for c in 0..grid.channels {
        write!(out, ",c{c}").unwrap();
    }
    out.push_str(if has_valid { ",valid\n" } else { "\n" });
    for i in 0..grid.height * grid.width {
        write!(out, "{},{}", i / grid.width, i % grid.width).unwrap();
        for x in grid.pixel(i) {
            write!(out, ",{x:?}").unwrap();
        }
        if let Some(v) = &grid.validity {
            write!(out, ",{}", v[i] as u8).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn grid_from_csv(text: &str) -> Result<GridContainer, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| CliError::format("missing `# height=… width=…` line"))?;
    let mut dims = [None; 4];
    for field in header.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| CliError::format(format!("bad header field {field:?}")))?;
        let slot = ["height", "width", "channels", "validity"]
            .iter()
            .position(|&n| n == k)
            .ok_or_else(|| CliError::format(format!("unknown header field {k:?}")))?;
        dims[slot] = Some(
            v.parse::<usize>()
                .map_err(|e| CliError::format(format!("header field {k}: {e}")))?,
        );
    }
    let [Some(h), Some(w), Some(c), Some(flag)] = dims else {
        return Err(CliError::format("header needs height, width, channels and validity"));
    };
    lines.next();
    let mut data = Vec::with_capacity(h * w * c);
    let mut validity = Vec::new();
    let mut rows = 0;
    for (n, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let err = |m: String| CliError::format(format!("data line {}: {m}", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 + c + flag {
            return Err(err(format!("expected {} fields, found {}", 2 + c + flag, fields.len())));
        }
        let (r, col): (usize, usize) = (
            fields[0].parse().map_err(|e| err(format!("{e}")))?,
            fields[1].parse().map_err(|e| err(format!("{e}")))?,
        );
        if (r, col) != (n / w.max(1), n % w.max(1)) {
            return Err(err("pixels must be listed in row-major order".into()));
        }
        for f in &fields[2..2 + c] {
            data.push(f.parse::<f32>().map_err(|e| err(format!("{e}")))?);
        }
        if flag == 1 {
            validity.push(match fields[2 + c] {
                "0" => false,
                "1" => true,
                v => return Err(err(format!("validity must be 0 or 1, got {v:?}"))),
            });
        }
        rows += 1;
    }
    if rows != h * w {
        return Err(CliError::format(format!("expected {} pixel rows, found {rows}", h * w)));
    }
    GridContainer::new(h, w, c, data, (flag == 1).then_some(validity))
}

/// `iteration,total,align,smooth,flow,flow_enabled`.
pub fn loss_trace_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("iteration,total,align,smooth,flow,flow_enabled\n");
    for r in trace {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{}",
            r.iteration, r.total, r.align, r.smooth, r.flow, r.flow_enabled as u8
        )
        .unwrap();
    }
    out
}
