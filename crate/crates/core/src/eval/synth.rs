//! Seeded synthetic flows standing in for labeled captures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Direction, Flow, FlowPacket, Protocol, TcpFlags};

pub const MAX_PACKET: f64 = 1500.0;

/// Normal packet-size model, clipped to the valid range for the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeModel {
    pub mean: f64,
    pub std: f64,
}

/// Traffic shape over a stretch of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub fwd_size: SizeModel,
    pub bwd_size: SizeModel,
    /// Probability that a packet is client-to-server.
    pub fwd_ratio: f64,
    /// Mean of the exponential inter-arrival gap, seconds.
    pub gap_mean: f64,
}

/// A second phase that takes over after `after` packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tail {
    pub after: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowWalk {
    pub start: u16,
    pub step_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTemplate {
    pub name: String,
    pub protocol: Protocol,
    pub head: Phase,
    #[serde(default)]
    pub tail: Option<Tail>,
    /// Inclusive packet-count range.
    pub length: (usize, usize),
    pub window: WindowWalk,
}

fn header_len(p: Protocol) -> u32 {
    match p {
        Protocol::Tcp => 40,
        Protocol::Udp => 28,
    }
}

impl Phase {
    fn validate(&self, name: &str) -> Result<()> {
        for s in [self.fwd_size, self.bwd_size] {
            if !(s.mean > 0.0 && s.mean <= MAX_PACKET && s.std >= 0.0 && s.std.is_finite()) {
                return Err(Error::invalid(format!("template {name}: bad size model {s:?}")));
            }
        }
        if !(0.0..=1.0).contains(&self.fwd_ratio) {
            return Err(Error::invalid(format!("template {name}: fwd_ratio outside [0, 1]")));
        }
        if !(self.gap_mean > 0.0 && self.gap_mean.is_finite()) {
            return Err(Error::invalid(format!("template {name}: gap_mean must be positive")));
        }
        Ok(())
    }
}

impl ClassTemplate {
    pub fn validate(&self) -> Result<()> {
        self.head.validate(&self.name)?;
        if let Some(t) = &self.tail {
            t.phase.validate(&self.name)?;
        }
        if self.length.0 < 1 || self.length.0 > self.length.1 {
            return Err(Error::invalid(format!("template {}: bad length range {:?}", self.name, self.length)));
        }
        if !(self.window.step_std >= 0.0 && self.window.step_std.is_finite()) {
            return Err(Error::invalid(format!("template {}: bad window walk", self.name)));
        }
        Ok(())
    }

    fn phase_at(&self, i: usize) -> &Phase {
        match &self.tail {
            Some(t) if i >= t.after => &t.phase,
            _ => &self.head,
        }
    }

    /// One flow drawn from this template.
    pub fn sample<R: Rng>(&self, id: String, rng: &mut R) -> Flow {
        let n = rng.random_range(self.length.0..=self.length.1);
        let header = header_len(self.protocol);
        let mut t = 0.0;
        let mut window = f64::from(self.window.start);
        let mut seen_bwd = false;
        let mut packets = Vec::with_capacity(n);
        for i in 0..n {
            let ph = self.phase_at(i);
            if i > 0 {
                t += Exp::new(1.0 / ph.gap_mean).expect("validated gap").sample(rng);
            }
            let direction = if i == 0 || rng.random::<f64>() < ph.fwd_ratio { Direction::Fwd } else { Direction::Bwd };
            let model = if direction == Direction::Fwd { ph.fwd_size } else { ph.bwd_size };
            let size = Normal::new(model.mean, model.std)
                .expect("validated size model")
                .sample(rng)
                .round()
                .clamp(f64::from(header), MAX_PACKET) as u32;
            let (tcp_flags, tcp_window) = match self.protocol {
                Protocol::Udp => (TcpFlags::empty(), None),
                Protocol::Tcp => {
                    let flags = if i == 0 {
                        TcpFlags::SYN
                    } else if direction == Direction::Bwd && !seen_bwd {
                        TcpFlags::SYN | TcpFlags::ACK
                    } else if size > header {
                        TcpFlags::ACK | TcpFlags::PSH
                    } else {
                        TcpFlags::ACK
                    };
                    if i > 0 {
                        window = (window
                            + Normal::new(0.0, self.window.step_std.max(f64::MIN_POSITIVE))
                                .expect("finite")
                                .sample(rng))
                        .clamp(1024.0, 65535.0);
                    }
                    (flags, Some(window.round() as u16))
                }
            };
            seen_bwd |= direction == Direction::Bwd;
            packets.push(FlowPacket {
                timestamp: t,
                direction,
                total_length: size,
                payload_length: size - header,
                tcp_flags,
                tcp_window,
            });
        }
        Flow::new(id, None, packets).with_label(self.name.clone())
    }
}

/// `n_per_class` labeled flows per template. Each template draws from its
/// own stream of the seeded generator, so adding a template leaves the
/// flows of the others unchanged.
pub fn synth_generate(templates: &[ClassTemplate], n_per_class: usize, seed: u64) -> Result<Vec<Flow>> {
    let mut flows = Vec::with_capacity(templates.len() * n_per_class);
    for (ti, tpl) in templates.iter().enumerate() {
        tpl.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ti as u64);
        for i in 0..n_per_class {
            flows.push(tpl.sample(format!("{}-{i:04}", tpl.name), &mut rng));
        }
    }
    Ok(flows)
}

fn size(mean: f64, std: f64) -> SizeModel {
    SizeModel { mean, std }
}

fn phase(fwd: SizeModel, bwd: SizeModel, fwd_ratio: f64, gap_mean: f64) -> Phase {
    Phase { fwd_size: fwd, bwd_size: bwd, fwd_ratio, gap_mean }
}

fn template(name: &str, protocol: Protocol, head: Phase, length: (usize, usize)) -> ClassTemplate {
    ClassTemplate {
        name: name.to_string(),
        protocol,
        head,
        tail: None,
        length,
        window: WindowWalk { start: 29200, step_std: 500.0 },
    }
}

/// Five everyday traffic shapes with overlapping size and timing ranges.
pub fn standard_templates() -> Vec<ClassTemplate> {
    vec![
        template("browsing", Protocol::Tcp, phase(size(420.0, 160.0), size(1100.0, 300.0), 0.45, 0.08), (20, 60)),
        template("streaming", Protocol::Tcp, phase(size(160.0, 90.0), size(1300.0, 180.0), 0.25, 0.03), (40, 100)),
        template("chat", Protocol::Tcp, phase(size(300.0, 130.0), size(330.0, 130.0), 0.5, 0.6), (10, 40)),
        template("beacon", Protocol::Tcp, phase(size(210.0, 60.0), size(170.0, 60.0), 0.6, 1.5), (10, 30)),
        template("upload", Protocol::Tcp, phase(size(1200.0, 220.0), size(120.0, 60.0), 0.75, 0.04), (30, 80)),
    ]
}

/// A class absent from [`standard_templates`]: a one-way tunnel pushing
/// full-size datagrams, compact and clearly apart from the five.
pub fn novel_template() -> ClassTemplate {
    template("tunnel", Protocol::Udp, phase(size(1450.0, 20.0), size(1450.0, 20.0), 1.0, 0.005), (150, 200))
}

/// Classes that differ only in their first ten packets; afterwards every
/// class follows the same shared phase.
pub fn prefix_templates() -> Vec<ClassTemplate> {
    let shared = Tail { after: 10, phase: phase(size(600.0, 300.0), size(800.0, 300.0), 0.5, 0.1) };
    let heads = [
        ("p-small", phase(size(120.0, 60.0), size(200.0, 80.0), 0.5, 0.05)),
        ("p-large", phase(size(900.0, 200.0), size(1200.0, 200.0), 0.5, 0.05)),
        ("p-push", phase(size(1100.0, 200.0), size(150.0, 60.0), 0.8, 0.05)),
        ("p-pull", phase(size(150.0, 60.0), size(1300.0, 150.0), 0.2, 0.05)),
        ("p-slow", phase(size(400.0, 150.0), size(500.0, 150.0), 0.5, 0.5)),
    ];
    heads
        .into_iter()
        .map(|(name, head)| ClassTemplate { tail: Some(shared), ..template(name, Protocol::Tcp, head, (30, 60)) })
        .collect()
}

/// Named preset lookup for command-line use.
pub fn preset(name: &str) -> Result<Vec<ClassTemplate>> {
    match name {
        "standard" => Ok(standard_templates()),
        "standard+novel" => {
            let mut t = standard_templates();
            t.push(novel_template());
            Ok(t)
        }
        "prefix" => Ok(prefix_templates()),
        other => Err(Error::invalid(format!("unknown template preset {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_flows() {
        let t = standard_templates();
        assert_eq!(synth_generate(&t, 5, 3).unwrap(), synth_generate(&t, 5, 3).unwrap());
        assert_ne!(synth_generate(&t, 5, 3).unwrap(), synth_generate(&t, 5, 4).unwrap());
    }

    #[test]
    fn one_per_class() {
        let t = standard_templates();
        let flows = synth_generate(&t, 1, 0).unwrap();
        assert_eq!(flows.len(), t.len());
        for (f, tpl) in flows.iter().zip(&t) {
            assert_eq!(f.label.as_deref(), Some(tpl.name.as_str()));
        }
    }

    #[test]
    fn adding_a_template_keeps_the_others() {
        let t = standard_templates();
        let mut more = t.clone();
        more.push(novel_template());
        let a = synth_generate(&t, 4, 9).unwrap();
        let b = synth_generate(&more, 4, 9).unwrap();
        assert_eq!(&b[..a.len()], &a[..]);
    }

    #[test]
    fn packets_stay_in_range() {
        let mut all = standard_templates();
        all.push(novel_template());
        all.extend(prefix_templates());
        for f in synth_generate(&all, 20, 1).unwrap() {
            let tpl = all.iter().find(|t| Some(&t.name) == f.label.as_ref()).unwrap();
            assert!((tpl.length.0..=tpl.length.1).contains(&f.len()));
            assert_eq!(f.packets[0].direction, Direction::Fwd);
            for w in f.packets.windows(2) {
                assert!(w[1].timestamp >= w[0].timestamp);
            }
            for p in &f.packets {
                assert!(p.total_length > 0 && p.total_length <= 1500);
                assert!(p.payload_length <= p.total_length);
            }
        }
    }

    #[test]
    fn mean_size_recovered() {
        // 200 flows of the fwd-only model: sample mean within 3 standard errors
        let tpl = ClassTemplate {
            length: (20, 20),
            ..template("m", Protocol::Tcp, phase(size(500.0, 100.0), size(500.0, 100.0), 1.0, 0.1), (1, 1))
        };
        let flows = synth_generate(&[tpl], 200, 17).unwrap();
        let sizes: Vec<f64> = flows.iter().flat_map(|f| f.packets.iter().map(|p| f64::from(p.total_length))).collect();
        let n = sizes.len() as f64;
        let mean = sizes.iter().sum::<f64>() / n;
        let se = 100.0 / n.sqrt();
        assert!((mean - 500.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn validation() {
        let mut t = novel_template();
        t.length = (5, 2);
        assert!(synth_generate(&[t], 1, 0).is_err());
        let mut t = novel_template();
        t.head.gap_mean = 0.0;
        assert!(t.validate().is_err());
        assert!(preset("nope").is_err());
        assert_eq!(preset("standard+novel").unwrap().len(), 6);
    }
}
