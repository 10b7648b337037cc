//! `patient_id,day,slot,glucose_mgdl` files for CGM and fingerstick data.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::domain::{CgmGrid, Origin, SmbgSample, DEFAULT_DAYS, SLOTS_PER_DAY};
use crate::error::{CoreError, Result};

pub const HEADER: [&str; 4] = ["patient_id", "day", "slot", "glucose_mgdl"];
/// Windows missing more than this fraction of slots are rejected.
pub const MAX_MISSING_FRACTION: f64 = 0.05;
/// Longest run of missing slots filled by interpolation.
pub const MAX_GAP: usize = 3;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    patient: String,
    day: usize,
    slot: usize,
    glucose: f64,
}

/// Rows keyed by patient then (day, slot); later rows replace earlier ones.
type Table = BTreeMap<String, BTreeMap<(usize, usize), f64>>;

fn read_table(reader: impl Read) -> Result<(Table, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok((Table::new(), 0)),
        Some(h) => h.map_err(|e| CoreError::Csv { line: 1, detail: e.to_string() })?,
    };
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(CoreError::Csv { line: 1, detail: format!("header must be {}", HEADER.join(",")) });
    }
    let mut table = Table::new();
    let mut duplicates = 0;
    for rec in records {
        let rec =
            rec.map_err(|e| CoreError::Csv { line: e.position().map_or(0, |p| p.line()), detail: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = parse_row(&rec, line)?;
        if table.entry(row.patient).or_default().insert((row.day, row.slot), row.glucose).is_some() {
            duplicates += 1;
        }
    }
    Ok((table, duplicates))
}

fn parse_row(rec: &csv::StringRecord, line: u64) -> Result<Row> {
    let bad = |detail: String| CoreError::Csv { line, detail };
    if rec.len() != 4 {
        return Err(bad(format!("expected 4 fields, found {}", rec.len())));
    }
    if rec[0].is_empty() {
        return Err(bad("empty patient_id".into()));
    }
    let day: usize = rec[1].parse().map_err(|_| bad(format!("day {:?} is not a nonnegative integer", &rec[1])))?;
    let slot: usize = rec[2].parse().map_err(|_| bad(format!("slot {:?} is not a nonnegative integer", &rec[2])))?;
    if slot >= SLOTS_PER_DAY {
        return Err(bad(format!("slot {} outside 0..{}", slot, SLOTS_PER_DAY)));
    }
    let glucose: f64 = rec[3].parse().map_err(|_| bad(format!("glucose {:?} is not a number", &rec[3])))?;
    if !(glucose.is_finite() && glucose > 0.0 && glucose <= 600.0) {
        return Err(CoreError::Validation(format!("line {}: glucose {} outside (0, 600] mg/dL", line, glucose)));
    }
    Ok(Row { patient: rec[0].to_string(), day, slot, glucose })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedWindow {
    pub patient_id: String,
    pub window_start: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CgmIngest {
    pub grids: Vec<CgmGrid>,
    pub rejected: Vec<RejectedWindow>,
    pub duplicates: usize,
}

/// Fills runs of at most [`MAX_GAP`] missing cells: linearly between two
/// readings, or by the nearest reading at either end of the window.
/// Returns the length of the first longer run, if any.
fn fill_gaps(cells: &mut [Option<f64>]) -> std::result::Result<(), usize> {
    let n = cells.len();
    let mut i = 0;
    while i < n {
        if cells[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && cells[i].is_none() {
            i += 1;
        }
        let len = i - start;
        if len > MAX_GAP {
            return Err(len);
        }
        let left = start.checked_sub(1).and_then(|j| cells[j]);
        let right = cells.get(i).copied().flatten();
        for (k, cell) in cells[start..i].iter_mut().enumerate() {
            *cell = Some(match (left, right) {
                (Some(a), Some(b)) => a + (b - a) * (k + 1) as f64 / (len + 1) as f64,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("window holds at least one reading"),
            });
        }
    }
    Ok(())
}

/// Groups readings into consecutive non-overlapping 14-day windows per
/// patient starting at day 0, cleaning or rejecting each.
pub fn ingest_cgm_reader(reader: impl Read) -> Result<CgmIngest> {
    let (table, duplicates) = read_table(reader)?;
    let mut out = CgmIngest { duplicates, ..CgmIngest::default() };
    let cells_per_window = DEFAULT_DAYS * SLOTS_PER_DAY;
    for (patient, rows) in table {
        let mut windows: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
        for (&(day, slot), &v) in &rows {
            let w = day / DEFAULT_DAYS;
            let cells = windows.entry(w).or_insert_with(|| vec![None; cells_per_window]);
            cells[(day % DEFAULT_DAYS) * SLOTS_PER_DAY + slot] = Some(v);
        }
        for (w, mut cells) in windows {
            let window_start = w * DEFAULT_DAYS;
            let missing = cells.iter().filter(|c| c.is_none()).count();
            let fraction = missing as f64 / cells_per_window as f64;
            let reject = |reason: String| RejectedWindow { patient_id: patient.clone(), window_start, reason };
            if fraction > MAX_MISSING_FRACTION {
                out.rejected.push(reject(format!("{:.2}% of slots missing", 100.0 * fraction)));
                continue;
            }
            if let Err(len) = fill_gaps(&mut cells) {
                out.rejected.push(reject(format!("gap of {} consecutive slots", len)));
                continue;
            }
            let values = cells.into_iter().map(|c| c.expect("filled")).collect();
            out.grids.push(CgmGrid::new(patient.clone(), window_start, DEFAULT_DAYS, SLOTS_PER_DAY, values)?);
        }
    }
    Ok(out)
}

pub fn ingest_cgm_csv(path: &Path) -> Result<CgmIngest> {
    ingest_cgm_reader(std::fs::File::open(path)?)
}

/// Fingerstick readings aligned to one CGM window.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSmbg {
    pub patient_id: String,
    pub window_start: usize,
    pub sample: SmbgSample,
}

#[derive(Debug, Clone, Default)]
pub struct SmbgIngest {
    pub samples: Vec<PairedSmbg>,
    /// `(patient_id, day, slot)` of readings outside every CGM window.
    pub orphans: Vec<(String, usize, usize)>,
    pub duplicates: usize,
}

/// Places each reading in the CGM window of the same patient covering its
/// day. Windows without readings produce no sample.
pub fn ingest_smbg_reader(reader: impl Read, windows: &[CgmGrid]) -> Result<SmbgIngest> {
    let (table, duplicates) = read_table(reader)?;
    let mut out = SmbgIngest { duplicates, ..SmbgIngest::default() };
    let mut per_window: BTreeMap<usize, SmbgSample> = BTreeMap::new();
    for (patient, rows) in table {
        for ((day, slot), v) in rows {
            let hit = windows.iter().position(|g| {
                g.patient_id() == patient && day >= g.window_start() && day < g.window_start() + g.days()
            });
            match hit {
                Some(i) => {
                    let g = &windows[i];
                    per_window
                        .entry(i)
                        .or_insert_with(|| SmbgSample::empty(g.days(), g.slots(), Origin::Real))
                        .observe(day - g.window_start(), slot, v)?;
                }
                None => out.orphans.push((patient.clone(), day, slot)),
            }
        }
    }
    out.samples = per_window
        .into_iter()
        .map(|(i, sample)| PairedSmbg {
            patient_id: windows[i].patient_id().to_string(),
            window_start: windows[i].window_start(),
            sample,
        })
        .collect();
    Ok(out)
}

pub fn ingest_smbg_csv(path: &Path, windows: &[CgmGrid]) -> Result<SmbgIngest> {
    ingest_smbg_reader(std::fs::File::open(path)?, windows)
}

/// Writes every cell of each grid as one row.
pub fn write_cgm_csv(grids: &[CgmGrid], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "{}", HEADER.join(","))?;
    for g in grids {
        for d in 0..g.days() {
            for t in 0..g.slots() {
                writeln!(w, "{},{},{},{}", g.patient_id(), g.window_start() + d, t, g.get(d, t))?;
            }
        }
    }
    Ok(())
}

/// Writes the observed cells of each sample, with days offset by its window start.
pub fn write_smbg_csv(samples: &[PairedSmbg], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "{}", HEADER.join(","))?;
    for s in samples {
        for (d, t, v) in s.sample.observations() {
            writeln!(w, "{},{},{},{}", s.patient_id, s.window_start + d, t, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_gaps_interpolate_long_gaps_fail() {
        let mut c = vec![Some(100.0), None, None, Some(130.0)];
        fill_gaps(&mut c).unwrap();
        assert_eq!(c, vec![Some(100.0), Some(110.0), Some(120.0), Some(130.0)]);
        let mut c = vec![None, None, Some(90.0), None];
        fill_gaps(&mut c).unwrap();
        assert_eq!(c, vec![Some(90.0); 4]);
        let mut c = vec![Some(1.0), None, None, None, None, Some(2.0)];
        assert_eq!(fill_gaps(&mut c), Err(4));
    }

    #[test]
    fn header_and_rows_validated() {
        let err = ingest_cgm_reader("a,b,c,d\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Csv { line: 1, .. }));
        let err = ingest_cgm_reader("patient_id,day,slot,glucose_mgdl\np,0,0,100\np,x,1,100\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Csv { line: 3, .. }), "{err}");
        let err = ingest_cgm_reader("patient_id,day,slot,glucose_mgdl\np,0,288,100\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Csv { line: 2, .. }));
        let err = ingest_cgm_reader("patient_id,day,slot,glucose_mgdl\np,0,1,700\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Validation(_)));
    }
}
