use std::path::Path;

use super::FormatError;
use crate::cka::CkaHeatmap;
use crate::error::Result;

fn csv_err(e: csv::Error) -> FormatError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FormatError::Io(io),
        other => FormatError::Csv(format!("{other:?}")),
    }
}

/// CSV with a `layer` header cell, column names across the top and row
/// names down the first column. Values use shortest round-trip formatting;
/// missing entries are empty cells.
pub fn heatmap_csv(h: &CkaHeatmap) -> std::result::Result<String, FormatError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = std::iter::once("layer").chain(h.col_names.iter().map(String::as_str));
    w.write_record(header).map_err(csv_err)?;
    for (i, name) in h.row_names.iter().enumerate() {
        let cells = (0..h.cols()).map(|j| h.get(i, j).map_or_else(String::new, |v| v.to_string()));
        w.write_record(std::iter::once(name.clone()).chain(cells)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| FormatError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|_| FormatError::InvalidUtf8 { what: "CSV" })
}

pub fn parse_heatmap_csv(text: &str) -> std::result::Result<CkaHeatmap, FormatError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("layer") {
        return Err(FormatError::InvalidHeader("CSV must start with a \"layer\" column".into()));
    }
    let col_names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut row_names = Vec::new();
    let mut values = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        row_names.push(record[0].to_owned());
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                FormatError::Csv(format!("row {:?} column {j}: {cell:?} is not a number", &record[0]))
            })?;
            values.push(Some(v));
        }
    }
    CkaHeatmap::new(row_names, col_names, values).map_err(|e| FormatError::InvalidHeader(e.to_string()))
}

pub fn write_heatmap_csv(h: &CkaHeatmap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, heatmap_csv(h)?).map_err(FormatError::from)?;
    Ok(())
}

pub fn read_heatmap_csv(path: impl AsRef<Path>) -> Result<CkaHeatmap> {
    let text = std::fs::read_to_string(path).map_err(FormatError::from)?;
    Ok(parse_heatmap_csv(&text)?)
}

/// Binary grayscale pixmap, one pixel per entry: `round(255·clamp(v, 0, 1))`,
/// missing entries black, with row 0 at the bottom.
pub fn heatmap_pgm(h: &CkaHeatmap) -> Vec<u8> {
    let (rows, cols) = (h.rows(), h.cols());
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    for i in (0..rows).rev() {
        out.extend((0..cols).map(|j| h.get(i, j).map_or(0, |v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)));
    }
    out
}

pub fn write_heatmap_pgm(h: &CkaHeatmap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, heatmap_pgm(h)).map_err(FormatError::from)?;
    Ok(())
}

pub fn emit_heatmap(h: &CkaHeatmap, csv_path: impl AsRef<Path>, image_path: Option<&Path>) -> Result<()> {
    write_heatmap_csv(h, csv_path)?;
    if let Some(p) = image_path {
        write_heatmap_pgm(h, p)?;
    }
    Ok(())
}
