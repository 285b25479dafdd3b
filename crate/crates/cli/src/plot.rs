//! Column extraction and text sparklines for history and CMC CSVs.

const BARS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

/// Header of the x column, header of the plotted column, and the rows.
pub type Series = (String, String, Vec<(String, f64)>);

/// `(x, y)` rows of `column` against the first column.
pub fn extract(csv: &str, column: Option<&str>) -> Result<Series, String> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or("empty CSV")?
        .split(',')
        .map(str::trim)
        .collect();
    let name = match column {
        Some(c) => c,
        None if header.contains(&"total") => "total",
        None if header.contains(&"match_rate") => "match_rate",
        None => header
            .get(1)
            .copied()
            .ok_or("CSV has a single column; pass --column")?,
    };
    let col = header
        .iter()
        .position(|h| *h == name)
        .ok_or_else(|| format!("no column {name:?}; columns are {}", header.join(", ")))?;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let y = fields
            .get(col)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| format!("line {}: no numeric value in column {name:?}", n + 2))?;
        rows.push((fields[0].to_string(), y));
    }
    Ok((header[0].to_string(), name.to_string(), rows))
}

/// Buckets `values` into `width` cells (mean per cell) scaled to the range.
pub fn sparkline(values: &[f64], width: usize) -> String {
    if values.is_empty() || width == 0 {
        return String::new();
    }
    let cells = width.min(values.len());
    let means: Vec<f64> = (0..cells)
        .map(|c| {
            let lo = c * values.len() / cells;
            let hi = ((c + 1) * values.len() / cells).max(lo + 1);
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    means
        .iter()
        .map(|&v| {
            if max > min {
                BARS[(((v - min) / (max - min)) * 7.0).round() as usize]
            } else {
                BARS[3]
            }
        })
        .collect()
}
