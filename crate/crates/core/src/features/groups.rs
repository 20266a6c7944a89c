//! Per-group feature computations. Each function reads a flow in arrival
//! order and returns that group's slots.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::flow::{Direction, Flow, FlowPacket, TcpFlags};

fn size(p: &FlowPacket) -> f64 {
    f64::from(p.total_length)
}

fn signed_size(p: &FlowPacket) -> f64 {
    match p.direction {
        Direction::Fwd => size(p),
        Direction::Bwd => -size(p),
    }
}

/// (mean, population std) of `xs`; zeros when empty.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn min_max_mean(xs: &[f64]) -> [f64; 3] {
    if xs.is_empty() {
        return [0.0; 3];
    }
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [min, max, xs.iter().sum::<f64>() / xs.len() as f64]
}

fn gaps<'a>(packets: impl Iterator<Item = &'a FlowPacket>) -> Vec<f64> {
    let ts: Vec<f64> = packets.map(|p| p.timestamp).collect();
    ts.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Window index of `t` relative to the flow start, if inside the horizon.
fn window_of(t: f64, start: f64, width: f64, n_windows: usize) -> Option<usize> {
    let j = ((t - start) / width).floor();
    (j >= 0.0 && j < n_windows as f64).then_some(j as usize)
}

/// Signed sizes of the first `n` packets, zero-padded.
pub fn first_packet_sizes(flow: &Flow, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (slot, p) in out.iter_mut().zip(&flow.packets) {
        *slot = signed_size(p);
    }
    out
}

/// Min, max, mean and population std of packet sizes in both directions.
pub fn packet_size_stats(flow: &Flow) -> [f64; 4] {
    let sizes: Vec<f64> = flow.packets.iter().map(size).collect();
    let [min, max, _] = min_max_mean(&sizes);
    let (mean, std) = mean_std(&sizes);
    [min, max, mean, std]
}

/// Mean and population std of consecutive size differences.
pub fn size_delta_stats(flow: &Flow) -> [f64; 2] {
    let deltas: Vec<f64> = flow.packets.windows(2).map(|w| size(&w[1]) - size(&w[0])).collect();
    let (mean, std) = mean_std(&deltas);
    [mean, std]
}

/// (min, max, mean) of time gaps for the bidirectional, forward-only and
/// backward-only packet streams.
pub fn inter_arrival_stats(flow: &Flow) -> [f64; 9] {
    let all = gaps(flow.packets.iter());
    let fwd = gaps(flow.packets.iter().filter(|p| p.is_fwd()));
    let bwd = gaps(flow.packets.iter().filter(|p| !p.is_fwd()));
    let mut out = [0.0; 9];
    out[0..3].copy_from_slice(&min_max_mean(&all));
    out[3..6].copy_from_slice(&min_max_mean(&fwd));
    out[6..9].copy_from_slice(&min_max_mean(&bwd));
    out
}

pub fn packets_per_second(flow: &Flow) -> [f64; 2] {
    let d = flow.duration();
    if d <= 0.0 {
        return [0.0, 0.0];
    }
    [flow.fwd_count() as f64 / d, flow.bwd_count() as f64 / d]
}

/// Per window, the byte total of the window when the initiator sent
/// strictly more packets than the responder, else 0.
pub fn beaconing_windows(flow: &Flow, window: f64, n_windows: usize) -> Vec<f64> {
    let mut bytes = vec![0.0; n_windows];
    let mut balance = vec![0i64; n_windows];
    let start = flow.start();
    for p in &flow.packets {
        if let Some(j) = window_of(p.timestamp, start, window, n_windows) {
            bytes[j] += size(p);
            balance[j] += if p.is_fwd() { 1 } else { -1 };
        }
    }
    bytes.iter().zip(&balance).map(|(&b, &c)| if c > 0 { b } else { 0.0 }).collect()
}

/// Per window, (min, max) of the change in advertised TCP window between
/// consecutive TCP packets of that window. Produces `2 * n_windows` slots.
pub fn bandwidth_windows(flow: &Flow, window: f64, n_windows: usize) -> Vec<f64> {
    let mut last: Vec<Option<f64>> = vec![None; n_windows];
    let mut range: Vec<Option<(f64, f64)>> = vec![None; n_windows];
    let start = flow.start();
    for p in &flow.packets {
        let (Some(w), Some(j)) = (p.tcp_window, window_of(p.timestamp, start, window, n_windows)) else {
            continue;
        };
        let w = f64::from(w);
        if let Some(prev) = last[j] {
            let d = w - prev;
            range[j] = Some(match range[j] {
                Some((lo, hi)) => (lo.min(d), hi.max(d)),
                None => (d, d),
            });
        }
        last[j] = Some(w);
    }
    range
        .iter()
        .flat_map(|r| {
            let (lo, hi) = r.unwrap_or((0.0, 0.0));
            [lo, hi]
        })
        .collect()
}

/// Number of bidirectional gaps of at least `gap` seconds.
pub fn silence_windows(flow: &Flow, gap: f64) -> f64 {
    gaps(flow.packets.iter()).into_iter().filter(|&g| g >= gap).count() as f64
}

pub fn ack_count(flow: &Flow) -> f64 {
    flow.packets.iter().filter(|p| p.tcp_flags.contains(TcpFlags::ACK)).count() as f64
}

/// Forward packets carrying more than `threshold` payload bytes that are
/// followed by another forward packet.
pub fn big_requests(flow: &Flow, threshold: u32) -> f64 {
    let fwd: Vec<&FlowPacket> = flow.packets.iter().filter(|p| p.is_fwd()).collect();
    fwd.windows(2).filter(|w| w[0].payload_length > threshold).count() as f64
}

/// Bits carried by the three largest runs of consecutive backward packets,
/// descending, zero-padded.
pub fn bits_per_peak(flow: &Flow) -> [f64; 3] {
    let mut peaks = Vec::new();
    let mut run = 0.0;
    let mut in_run = false;
    for p in &flow.packets {
        if p.is_fwd() {
            if in_run {
                peaks.push(run * 8.0);
            }
            run = 0.0;
            in_run = false;
        } else {
            run += size(p);
            in_run = true;
        }
    }
    if in_run {
        peaks.push(run * 8.0);
    }
    peaks.sort_by(|a, b| b.total_cmp(a));
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(peaks) {
        *o = p;
    }
    out
}

fn fft_plan(n: usize) -> Arc<dyn Fft<f64>> {
    static PLAN_90: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    if n == 90 {
        PLAN_90.get_or_init(|| FftPlanner::new().plan_fft_forward(90)).clone()
    } else {
        FftPlanner::new().plan_fft_forward(n)
    }
}

/// DFT magnitudes of an arbitrary real signal.
pub fn dft_magnitudes(signal: &[f64]) -> Vec<f64> {
    if signal.is_empty() {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft_plan(signal.len()).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// DFT magnitudes of the signed size sequence of the first `n` packets
/// (zero-padded to `n`).
pub fn wavelet_coeffs(flow: &Flow, n: usize) -> Vec<f64> {
    dft_magnitudes(&first_packet_sizes(flow, n))
}
