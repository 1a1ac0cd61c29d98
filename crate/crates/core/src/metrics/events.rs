/// Half-open `[start, end)` run of consecutive positive labels.
pub type Event = (usize, usize);

/// Maximal runs of `1` labels, in order.
pub fn events(labels: &[u8]) -> Vec<Event> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &l) in labels.iter().enumerate() {
        match (l != 0, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, labels.len()));
    }
    out
}

/// Median event length, `None` without events.
pub fn median_length(ev: &[Event]) -> Option<f64> {
    if ev.is_empty() {
        return None;
    }
    let mut lens: Vec<usize> = ev.iter().map(|(s, e)| e - s).collect();
    lens.sort_unstable();
    let n = lens.len();
    Some(if n % 2 == 1 {
        lens[n / 2] as f64
    } else {
        (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0
    })
}
