//! Long-format plotting table from an episode log: one row per
//! `(step, panel, series, value)`.
//!
//! Panels: `revenue` (reward and its components), `commitment` (long-term
//! and real-time quantities, long-term cap), `battery_action` and `soc` (one
//! series per battery), `price` (real-time and long-term) and `availability`
//! (available and dispatched power per renewable).

use thiserror::Error;

pub const PLOT_HEADER: &str = "step,panel,series,value";

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("episode log schema: {0}")]
    Schema(String),
    #[error("episode log row {row}: column {column:?} has non-numeric value {value:?}")]
    Value { row: usize, column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

const REVENUE: [&str; 5] = ["reward", "rt_rev", "lt_rev", "batt_cost", "curtail_cost"];
const COMMITMENT: [&str; 3] = ["lt_qty", "rt_qty", "lt_cap"];
const PRICE: [&str; 2] = ["rt_price", "lt_price"];

/// `(panel, series, column)` for every plotted column, in output order.
fn layout(header: &[String]) -> Result<Vec<(&'static str, String, usize)>, PlotError> {
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PlotError::Schema(format!("missing column {name:?}")))
    };
    col("step")?;
    let mut out = Vec::new();
    for (panel, names) in [("revenue", &REVENUE[..]), ("commitment", &COMMITMENT[..])] {
        for n in names {
            out.push((panel, n.to_string(), col(n)?));
        }
    }
    let suffixed = |prefix: &str| -> Vec<String> {
        header.iter().filter_map(|h| h.strip_prefix(prefix)).map(str::to_string).collect()
    };
    let batteries = suffixed("act_batt_");
    for b in suffixed("soc_") {
        if !batteries.contains(&b) {
            return Err(PlotError::Schema(format!("missing column \"act_batt_{b}\" for battery {b:?}")));
        }
    }
    for b in &batteries {
        out.push(("battery_action", b.clone(), col(&format!("act_batt_{b}"))?));
    }
    for b in &batteries {
        out.push(("soc", b.clone(), col(&format!("soc_{b}"))?));
    }
    for n in PRICE {
        out.push(("price", n.to_string(), col(n)?));
    }
    let renewables = suffixed("avail_");
    for r in suffixed("act_ren_") {
        if !renewables.contains(&r) {
            return Err(PlotError::Schema(format!("missing column \"avail_{r}\" for renewable {r:?}")));
        }
    }
    for r in &renewables {
        out.push(("availability", format!("avail_{r}"), col(&format!("avail_{r}"))?));
        out.push(("availability", format!("dispatch_{r}"), col(&format!("act_ren_{r}"))?));
    }
    Ok(out)
}

/// Convert an episode log CSV into the long-format table.
pub fn plotdata(log_csv: &str) -> Result<String, PlotError> {
    let mut reader = csv::Reader::from_reader(log_csv.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(PlotError::Schema("missing header row".into()));
    }
    let cols = layout(&header)?;
    let step_col = header.iter().position(|h| h == "step").expect("checked by layout");
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, PlotError> {
            let v = rec.get(c).unwrap_or("");
            v.parse::<f64>().map_err(|_| PlotError::Value { row, column: header[c].clone(), value: v.to_string() })
        };
        let step = rec.get(step_col).unwrap_or("");
        if step.parse::<usize>().is_err() {
            return Err(PlotError::Value { row, column: "step".into(), value: step.to_string() });
        }
        for (panel, series, c) in &cols {
            out.push_str(&format!("{step},{panel},{series},{}\n", num(*c)?));
        }
    }
    Ok(out)
}
