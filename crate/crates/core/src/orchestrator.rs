//! Campaign orchestration: the master node of the bench.
//!
//! One temperature step runs as: command the set-point, tick the plant
//! until all housings settle inside the tolerance band for the hold
//! time, then sweep the stage across the field of view, capturing
//! telemetry and a frame burst per sensor at every position, stream
//! everything into one bag, rotate back, idle out the dwell budget, and
//! advance the aging state by the dwell actually spent.
//!
//! Commands and data reports travel over the simulation bus; the shared
//! physics (plant temperatures, stage pose) lives in the world state the
//! nodes read when they act.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bag::{
    BagError, BagHeader, BagWriter, ChannelType, FrameRecord, RecordBody, StageRecord,
    TelemetryRecord, ThermalRecord,
};
use crate::config::Config;
use crate::lidar::{
    advance_aging, compute_dir_grid, compute_hit_grid_with, frame_from_grid, telemetry,
    AgingState, CaptureCtx, DirGrid, Frame, Intrinsics, WaveformParams,
};
use crate::rng;
use crate::simbus::{
    Bus, ChannelId, Command, Message, Payload, PayloadKind, StageSample, SubscriptionId,
    ThermalSample,
};
use crate::stage::Stage;
use crate::thermal::{plant_step, CascadePi, SettleMonitor, ThermalState, TraceRow};

/// Closed-loop settling regression bound for the default plant, gains
/// and profile: every 5 °C step (and the initial pull-in from ambient)
/// settles with margin inside this many virtual seconds. Measured once
/// on the reference implementation and frozen; the default settle
/// timeout is ten times this value.
pub const CLOSED_LOOP_SETTLE_BOUND_S: f64 = 400.0;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("settling timeout after {waited:.0} s at step {step} (T_set {t_set} °C)")]
    SettleTimeout { step: usize, t_set: f64, waited: f64 },
    #[error("stage fault: {0}")]
    Stage(#[from] crate::stage::StageError),
    #[error("bus fault: {0}")]
    Bus(#[from] crate::simbus::BusError),
    #[error("thermal fault: {0}")]
    Thermal(#[from] crate::thermal::ThermalError),
    #[error("bag fault: {0}")]
    Bag(#[from] BagError),
    #[error("io fault: {0}")]
    Io(#[from] std::io::Error),
    #[error("config fault: {0}")]
    Config(#[from] crate::config::ConfigError),
}

/// One recorded bag in the campaign manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRef {
    pub cycle: u32,
    pub step_index: u16,
    pub t_set_c: f64,
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Campaign manifest: config echo plus every recorded bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: Config,
    pub config_sha256: String,
    pub bags: Vec<BagRef>,
}

impl Manifest {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_file(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text).map_err(crate::config::ConfigError::Parse)?)
    }
}

/// Sha256 of the canonical (pretty JSON) config serialization.
pub fn config_sha256(cfg: &Config) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(cfg.to_json_pretty().as_bytes());
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

struct ThermalNode {
    state: ThermalState,
    pi: CascadePi,
    t_set: f64,
    cmd_sub: SubscriptionId,
    next_publish: f64,
}

struct StageNode {
    stage: Stage,
    rng: rand_chacha::ChaCha8Rng,
    cmd_sub: SubscriptionId,
    /// Completion (time, sample) of an in-flight move.
    in_flight: Option<(f64, StageSample)>,
}

struct DutNode {
    id: u8,
    aging: AgingState,
    /// Nominal intrinsics plus injected perturbations.
    k_base: Intrinsics,
    dir_grid: Option<DirGrid>,
    telem_counter: u64,
    capture_counter: u64,
    cmd_sub: SubscriptionId,
}

impl DutNode {
    fn k_eff(&self) -> Intrinsics {
        let d = &self.aging.drift;
        Intrinsics {
            fx: self.k_base.fx + d.dfx,
            fy: self.k_base.fy + d.dfy,
            cx: self.k_base.cx + d.dcx,
            cy: self.k_base.cy + d.dcy,
            k1: self.k_base.k1 + d.dk1,
        }
    }

    fn dead_with_injected(&self, cfg: &Config) -> BTreeSet<(u16, u16)> {
        let mut dead = self.aging.dead_pixels.clone();
        for (d, u, v) in &cfg.injection.dead_pixels {
            if *d == self.id {
                dead.insert((*u, *v));
            }
        }
        dead
    }
}

struct Channels {
    thermal_cmd: ChannelId,
    thermal_state: ChannelId,
    stage_cmd: ChannelId,
    stage_actual: ChannelId,
    dut_cmd: Vec<ChannelId>,
    dut_frame: Vec<ChannelId>,
    dut_telemetry: Vec<ChannelId>,
}

/// The campaign master.
pub struct Orchestrator {
    cfg: Config,
    out_dir: PathBuf,
    bus: Bus,
    ch: Channels,
    thermal: ThermalNode,
    stage_node: StageNode,
    duts: Vec<DutNode>,
    monitor: SettleMonitor,
    // master subscriptions
    sub_stage_actual: SubscriptionId,
    sub_thermal_state: SubscriptionId,
    sub_frames: Vec<SubscriptionId>,
    sub_telemetry: Vec<SubscriptionId>,
    /// Optional capture-angle audit log: (cycle, position, dut, phi).
    pub log_capture_angles: bool,
    pub capture_log: Vec<(u32, u16, u8, f64)>,
    trace: Vec<TraceRow>,
}

impl Orchestrator {
    pub fn new(cfg: Config, out_dir: &Path) -> Result<Self, OrchestratorError> {
        cfg.validate()?;
        let mut bus = Bus::new(cfg.campaign.thermal_dt_s);
        let n_duts = cfg.campaign.dut_count as usize;

        let thermal_cmd = bus.register_channel("thermal/cmd", PayloadKind::Command)?;
        let thermal_state = bus.register_channel("thermal/state", PayloadKind::Thermal)?;
        let stage_cmd = bus.register_channel("stage/cmd", PayloadKind::Command)?;
        let stage_actual = bus.register_channel("stage/actual", PayloadKind::Stage)?;
        let mut dut_cmd = Vec::new();
        let mut dut_frame = Vec::new();
        let mut dut_telemetry = Vec::new();
        for d in 0..n_duts {
            dut_cmd.push(bus.register_channel(&format!("dut{d}/cmd"), PayloadKind::Command)?);
            dut_frame.push(bus.register_channel(&format!("dut{d}/frame"), PayloadKind::Frame)?);
            dut_telemetry
                .push(bus.register_channel(&format!("dut{d}/telemetry"), PayloadKind::Telemetry)?);
        }

        let thermal = ThermalNode {
            state: ThermalState::uniform(22.0),
            pi: CascadePi::new(cfg.gains.clone()),
            t_set: 22.0,
            cmd_sub: bus.subscribe(thermal_cmd),
            next_publish: 0.0,
        };
        let stage_node = StageNode {
            stage: Stage::new(cfg.stage.clone(), cfg.campaign.sweep_start_deg),
            rng: rng::rng_for(cfg.seed, &[label("stage")]),
            cmd_sub: bus.subscribe(stage_cmd),
            in_flight: None,
        };
        let mut duts = Vec::new();
        for d in 0..n_duts {
            duts.push(DutNode {
                id: d as u8,
                aging: AgingState::default(),
                k_base: cfg.intrinsics_nominal,
                dir_grid: None,
                telem_counter: 0,
                capture_counter: 0,
                cmd_sub: bus.subscribe(dut_cmd[d]),
            });
        }

        let sub_stage_actual = bus.subscribe(stage_actual);
        let sub_thermal_state = bus.subscribe(thermal_state);
        let sub_frames = dut_frame.iter().map(|&c| bus.subscribe(c)).collect();
        let sub_telemetry = dut_telemetry.iter().map(|&c| bus.subscribe(c)).collect();

        let monitor = SettleMonitor::new(cfg.campaign.epsilon_c, cfg.campaign.hold_s);

        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            ch: Channels {
                thermal_cmd,
                thermal_state,
                stage_cmd,
                stage_actual,
                dut_cmd,
                dut_frame,
                dut_telemetry,
            },
            bus,
            thermal,
            stage_node,
            duts,
            monitor,
            sub_stage_actual,
            sub_thermal_state,
            sub_frames,
            sub_telemetry,
            log_capture_angles: false,
            capture_log: Vec::new(),
            trace: Vec::new(),
            cfg,
        })
    }

    pub fn thermal_state(&self) -> &ThermalState {
        &self.thermal.state
    }

    pub fn aging(&self, dut: usize) -> &AgingState {
        &self.duts[dut].aging
    }

    pub fn now(&self) -> f64 {
        self.bus.now()
    }

    /// One scheduler tick: advance the bus, let every node act, step the plant.
    fn tick(&mut self) -> Result<(), OrchestratorError> {
        let dt = self.cfg.campaign.thermal_dt_s;
        self.bus.advance(dt)?;
        let now = self.bus.now();

        // thermal node: consume commands, step controller and plant
        while let Some(msg) = self.bus.poll(self.thermal.cmd_sub) {
            if let Payload::Command(Command::SetTemperature { t_set }) = msg.payload {
                self.thermal.t_set = t_set;
            }
        }
        let cmd = self
            .thermal
            .pi
            .step(self.thermal.t_set, &self.thermal.state, dt);
        self.thermal.state = plant_step(&self.thermal.state, cmd, &self.cfg.plant, dt)?;
        if now >= self.thermal.next_publish {
            let sample = ThermalSample {
                t_set: self.thermal.t_set,
                t_oil: self.thermal.state.t_oil,
                temps: self.thermal.state.thermocouples(),
            };
            self.bus
                .publish(self.ch.thermal_state, Payload::Thermal(sample), now)?;
            self.thermal.next_publish = now + self.cfg.campaign.thermal_record_dt_s;
        }
        if self.cfg.thermal_trace_csv {
            self.trace.push(TraceRow {
                t_virtual_s: now,
                t_set: self.thermal.t_set,
                t_oil: self.thermal.state.t_oil,
                thermocouples: self.thermal.state.thermocouples(),
            });
        }

        // stage node: accept commands, report completed motions
        while let Some(msg) = self.bus.poll(self.stage_node.cmd_sub) {
            if let Payload::Command(Command::MoveStage { position_index, phi_deg }) = msg.payload {
                let motion = self.stage_node.stage.move_to(phi_deg, &mut self.stage_node.rng)?;
                let done_at = now + motion.duration_s;
                self.stage_node.in_flight = Some((
                    done_at,
                    StageSample {
                        position_index,
                        phi_cmd_deg: phi_deg,
                        phi_actual_deg: motion.phi_actual_deg,
                    },
                ));
            }
        }
        if let Some((done_at, sample)) = self.stage_node.in_flight.take() {
            if done_at <= now {
                self.bus
                    .publish(self.ch.stage_actual, Payload::Stage(sample), now)?;
            } else {
                self.stage_node.in_flight = Some((done_at, sample));
            }
        }

        // sensor nodes: telemetry requests and capture bursts
        for d in 0..self.duts.len() {
            loop {
                let Some(msg) = self.bus.poll(self.duts[d].cmd_sub) else { break };
                match msg.payload {
                    Payload::Command(Command::RequestTelemetry { .. }) => {
                        let node = &mut self.duts[d];
                        let seed =
                            rng::stream(self.cfg.seed, &[label("telem"), d as u64, node.telem_counter]);
                        node.telem_counter += 1;
                        let data = telemetry(
                            &self.thermal.state,
                            &node.aging,
                            &self.cfg.telemetry,
                            node.id,
                            seed,
                        );
                        self.bus
                            .publish(self.ch.dut_telemetry[d], Payload::Telemetry(data), now)?;
                    }
                    Payload::Command(Command::Capture { frames, .. }) => {
                        let frames = self.capture_burst(d, frames, now);
                        for (t, frame) in frames {
                            self.bus.publish(self.ch.dut_frame[d], Payload::Frame(frame), t)?;
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Synthesizes one burst of frames for a sensor at the current pose.
    fn capture_burst(&mut self, d: usize, n: u16, now: f64) -> Vec<(f64, Frame)> {
        let phi = self.stage_node.stage.phi_actual();
        let node = &mut self.duts[d];
        let k_eff = node.k_eff();
        if node.dir_grid.is_none() {
            node.dir_grid = Some(compute_dir_grid(&self.cfg.dut, &k_eff));
        }
        let dead = node.dead_with_injected(&self.cfg);
        let wf = WaveformParams::default();
        let ctx = CaptureCtx {
            spec: &self.cfg.dut,
            k: &k_eff,
            scene: &self.cfg.scene,
            beam: &self.cfg.beam,
            noise: &self.cfg.noise,
            wf: &wf,
            gain_dn: self.cfg.gain_dn.0,
            eta_p: node.aging.eta_p,
            widen: node.aging.widen,
            dead: &dead,
            t_tof_c: self.thermal.state.t_housing[(node.id as usize).min(2)]
                + self.cfg.telemetry.dt_tof_k,
            phi_stage_deg: phi,
            parametric: self.cfg.parametric_mode,
            with_truth: false,
        };
        let grid = compute_hit_grid_with(&ctx, node.dir_grid.as_ref().unwrap());
        let frame_dt = 1.0 / self.cfg.dut.max_frame_rate_hz;
        let mut out = Vec::with_capacity(n as usize);
        for k in 0..n {
            let seq = node.capture_counter as u32;
            let frame_seed = rng::stream(
                self.cfg.seed,
                &[label("frame"), d as u64, node.capture_counter],
            );
            node.capture_counter += 1;
            let t = now + (k as f64 + 1.0) * frame_dt;
            let frame = frame_from_grid(&ctx, &grid, seq, t, node.id, frame_seed);
            out.push((t, frame));
        }
        out
    }

    /// Ticks until the predicate fires or the timeout elapses; returns
    /// the wait duration on success.
    fn tick_until(
        &mut self,
        timeout_s: f64,
        mut done: impl FnMut(&mut Self) -> bool,
    ) -> Result<Option<f64>, OrchestratorError> {
        let start = self.bus.now();
        loop {
            if done(self) {
                return Ok(Some(self.bus.now() - start));
            }
            if self.bus.now() - start > timeout_s {
                return Ok(None);
            }
            self.tick()?;
        }
    }

    fn drain_stage_reports(&mut self) -> Vec<StageSample> {
        let mut out = Vec::new();
        while let Some(msg) = self.bus.poll(self.sub_stage_actual) {
            if let Payload::Stage(s) = msg.payload {
                out.push(s);
            }
        }
        out
    }

    /// Runs one full cycle; returns the bags it recorded.
    pub fn run_cycle(&mut self, cycle: u32) -> Result<Vec<BagRef>, OrchestratorError> {
        self.apply_injection_overrides(cycle);
        for node in &mut self.duts {
            node.aging.cycle_count = cycle;
            node.dir_grid = None; // intrinsics may have drifted between cycles
        }

        let set_points = self.cfg.campaign.profile.set_points();
        let dwell_budget_s = self.cfg.campaign.profile.cycle_duration_h * 3600.0 / set_points.len() as f64;
        let positions = self.cfg.campaign.sweep_positions();
        let bags_dir = self.out_dir.join("bags");
        std::fs::create_dir_all(&bags_dir)?;

        let mut bags = Vec::new();
        for (step_idx, &t_set) in set_points.iter().enumerate() {
            let step_start = self.bus.now();
            let now = self.bus.now();
            self.bus.publish(
                self.ch.thermal_cmd,
                Payload::Command(Command::SetTemperature { t_set }),
                now,
            )?;
            self.monitor.reset();

            // settle wait
            let timeout = self.cfg.campaign.settle_timeout_s;
            let waited = self.tick_until(timeout, |s| {
                let state = s.thermal.state;
                let now = s.bus.now();
                s.monitor.update(&state, t_set, now)
            })?;
            if waited.is_none() {
                return Err(OrchestratorError::SettleTimeout {
                    step: step_idx,
                    t_set,
                    waited: timeout,
                });
            }

            let bag_ref = self.record_step(cycle, step_idx as u16, t_set, &positions, &bags_dir)?;
            bags.push(bag_ref);

            // idle out the remainder of the dwell budget
            while self.bus.now() - step_start < dwell_budget_s {
                self.tick()?;
            }

            // aging advances by the dwell actually spent at this set-point
            let dwell = self.bus.now() - step_start;
            let t_housing = self.thermal.state.mean_housing();
            for d in 0..self.duts.len() {
                let seed = rng::stream(
                    self.cfg.seed,
                    &[label("aging"), d as u64, cycle as u64, step_idx as u64],
                );
                let node = &mut self.duts[d];
                node.aging = advance_aging(
                    &node.aging,
                    dwell,
                    t_housing,
                    &self.cfg.aging,
                    self.cfg.dut.width_px,
                    self.cfg.dut.height_px,
                    seed,
                );
                node.dir_grid = None; // drift may have moved the intrinsics
            }

            if self.cfg.thermal_trace_csv {
                let path = bags_dir.join(format!("cycle{cycle:03}_step{step_idx:02}_trace.csv"));
                let f = std::fs::File::create(path)?;
                crate::thermal::write_trace_csv(std::io::BufWriter::new(f), &self.trace)?;
                self.trace.clear();
            }
        }
        Ok(bags)
    }

    /// Records one temperature step: full sweep into one bag.
    fn record_step(
        &mut self,
        cycle: u32,
        step_idx: u16,
        t_set: f64,
        positions: &[f64],
        bags_dir: &Path,
    ) -> Result<BagRef, OrchestratorError> {
        let n_duts = self.duts.len();
        let created_t = self.bus.now();
        let mut channels = vec![
            ("stage/actual".to_string(), ChannelType::Stage),
            ("thermal/state".to_string(), ChannelType::Thermal),
        ];
        for d in 0..n_duts {
            channels.push((format!("dut{d}/telemetry"), ChannelType::Telemetry));
            channels.push((format!("dut{d}/frame"), ChannelType::Frame));
        }
        let header = BagHeader {
            version: crate::bag::VERSION,
            cycle,
            step_index: step_idx,
            t_set_c: t_set as f32,
            created_t,
            channels,
        };
        let stage_ch = 0u16;
        let thermal_ch = 1u16;
        let telem_ch = |d: u16| 2 + d * 2;
        let frame_ch = |d: u16| 3 + d * 2;

        let file_name = format!(
            "cycle{cycle:03}_step{step_idx:02}_T{t_set:+06.1}C_t{:07}.arlb",
            created_t.round() as u64
        );
        let path = bags_dir.join(&file_name);
        let mut writer = BagWriter::create(&path, header)?;

        // drop samples published before recording started, then take a
        // snapshot right at the start
        self.bus.drain(self.sub_thermal_state);
        let now = self.bus.now();
        self.bus.publish(
            self.ch.thermal_state,
            Payload::Thermal(ThermalSample {
                t_set,
                t_oil: self.thermal.state.t_oil,
                temps: self.thermal.state.thermocouples(),
            }),
            now,
        )?;

        for (pos_idx, &phi_cmd) in positions.iter().enumerate() {
            // move and wait for the actual-angle report
            let now = self.bus.now();
            self.bus.publish(
                self.ch.stage_cmd,
                Payload::Command(Command::MoveStage {
                    position_index: pos_idx as u16,
                    phi_deg: phi_cmd,
                }),
                now,
            )?;
            let mut reported: Option<StageSample> = None;
            let moved = self.tick_until(60.0, |s| {
                if let Some(sample) = s.drain_stage_reports().pop() {
                    // keep the freshest report
                    return {
                        let slot = &mut reported;
                        *slot = Some(sample);
                        true
                    };
                }
                false
            })?;
            if moved.is_none() {
                return Err(OrchestratorError::Stage(crate::stage::StageError::InvalidParams(
                    "stage did not report completion".into(),
                )));
            }
            let sample = reported.expect("stage sample");
            writer.write_record(
                stage_ch,
                self.bus.now(),
                &RecordBody::Stage(StageRecord {
                    position_index: sample.position_index,
                    phi_cmd_deg: sample.phi_cmd_deg,
                    phi_actual_deg: sample.phi_actual_deg,
                }),
            )?;

            if self.log_capture_angles {
                for d in 0..n_duts {
                    self.capture_log
                        .push((cycle, pos_idx as u16, d as u8, self.stage_node.stage.phi_actual()));
                }
            }

            // telemetry and frame burst for every sensor, in parallel time
            let now = self.bus.now();
            for d in 0..n_duts {
                self.bus.publish(
                    self.ch.dut_cmd[d],
                    Payload::Command(Command::RequestTelemetry { dut: d as u8 }),
                    now,
                )?;
                self.bus.publish(
                    self.ch.dut_cmd[d],
                    Payload::Command(Command::Capture {
                        dut: d as u8,
                        frames: self.cfg.campaign.frames_per_position,
                    }),
                    now,
                )?;
            }
            let capture_window =
                self.cfg.campaign.frames_per_position as f64 / self.cfg.dut.max_frame_rate_hz;
            let deadline = now + capture_window + 2.0 * self.cfg.campaign.thermal_dt_s;
            while self.bus.now() < deadline {
                self.tick()?;
            }
            for msg in self.bus.drain(self.sub_thermal_state) {
                if let Payload::Thermal(s) = msg.payload {
                    writer.write_record(
                        thermal_ch,
                        msg.t,
                        &RecordBody::Thermal(ThermalRecord {
                            t_set: s.t_set,
                            t_oil: s.t_oil,
                            thermocouples: s.temps,
                        }),
                    )?;
                }
            }

            // commit in sensor-index order
            for d in 0..n_duts {
                let mut telem: Vec<Message> = self.bus.drain(self.sub_telemetry[d]);
                for msg in telem.drain(..) {
                    if let Payload::Telemetry(data) = msg.payload {
                        writer.write_record(
                            telem_ch(d as u16),
                            msg.t,
                            &RecordBody::Telemetry(TelemetryRecord {
                                dut_id: d as u8,
                                data,
                            }),
                        )?;
                    }
                }
                let mut frames: Vec<Message> = self.bus.drain(self.sub_frames[d]);
                frames.sort_by(|a, b| a.t.total_cmp(&b.t));
                for msg in frames {
                    if let Payload::Frame(frame) = msg.payload {
                        writer.write_record(
                            frame_ch(d as u16),
                            msg.t,
                            &RecordBody::Frame(FrameRecord::from(&frame)),
                        )?;
                    }
                }
            }
        }

        // rotate back to the start position; not part of the sweep record
        let now = self.bus.now();
        self.bus.publish(
            self.ch.stage_cmd,
            Payload::Command(Command::MoveStage {
                position_index: 0,
                phi_deg: self.cfg.campaign.sweep_start_deg,
            }),
            now,
        )?;
        self.tick_until(60.0, |s| !s.drain_stage_reports().is_empty())?;

        let sha256 = writer.finish()?;
        Ok(BagRef {
            cycle,
            step_index: step_idx,
            t_set_c: t_set,
            path: format!("bags/{file_name}"),
            sha256,
        })
    }

    fn apply_injection_overrides(&mut self, cycle: u32) {
        let overrides: Vec<_> = self
            .cfg
            .injection
            .overrides
            .iter()
            .filter(|o| o.cycle == cycle)
            .cloned()
            .collect();
        for o in overrides {
            for node in &mut self.duts {
                if o.dut.is_some() && o.dut != Some(node.id) {
                    continue;
                }
                if let Some(e) = o.eta_p {
                    node.aging.eta_p = e;
                }
                if let Some(w) = o.widen {
                    node.aging.widen = w;
                }
                if let Some(s) = o.fx_scale {
                    node.k_base.fx *= s;
                }
                if let Some(s) = o.fy_scale {
                    node.k_base.fy *= s;
                }
                if let Some(s) = o.cx_shift_px {
                    node.k_base.cx += s;
                }
                if let Some(s) = o.cy_shift_px {
                    node.k_base.cy += s;
                }
                if let Some(s) = o.k1_shift {
                    node.k_base.k1 += s;
                }
                node.dir_grid = None;
            }
        }
    }
}

fn label(tag: &str) -> u64 {
    let mut x = 0u64;
    for (i, b) in tag.bytes().enumerate().take(8) {
        x |= (b as u64) << (8 * i);
    }
    x
}

/// Runs a full campaign and writes `manifest.json` into the output
/// directory. On failure the partial manifest is still written.
pub fn run_campaign(cfg: &Config, out_dir: &Path) -> Result<Manifest, OrchestratorError> {
    run_campaign_with(cfg, out_dir, |_| {})
}

/// Like [`run_campaign`], with a per-cycle progress callback.
pub fn run_campaign_with(
    cfg: &Config,
    out_dir: &Path,
    mut progress: impl FnMut(u32),
) -> Result<Manifest, OrchestratorError> {
    std::fs::create_dir_all(out_dir)?;
    let mut orch = Orchestrator::new(cfg.clone(), out_dir)?;
    let mut manifest = Manifest {
        schema_version: 1,
        config: cfg.clone(),
        config_sha256: config_sha256(cfg),
        bags: Vec::new(),
    };
    let result: Result<(), OrchestratorError> = (|| {
        for cycle in 0..cfg.campaign.cycles {
            let bags = orch.run_cycle(cycle)?;
            manifest.bags.extend(bags);
            progress(cycle);
        }
        Ok(())
    })();
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(&manifest_path, manifest.to_json_pretty())?;
    result.map(|_| manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_is_stable() {
        assert_eq!(label("stage"), label("stage"));
        assert_ne!(label("stage"), label("frame"));
    }

    #[test]
    fn set_point_counts_match_profile() {
        let cfg = Config::default();
        let pts = cfg.campaign.profile.set_points();
        assert_eq!(pts.len(), 38);
        let mut asc = cfg.clone();
        asc.campaign.profile.policy = crate::thermal::ProfilePolicy::AscendingOnly;
        assert_eq!(asc.campaign.profile.set_points().len(), 20);
    }

    #[test]
    fn zero_cycles_yield_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = Config::default();
        cfg.campaign.cycles = 0;
        let manifest = run_campaign(&cfg, dir.path()).unwrap();
        assert!(manifest.bags.is_empty());
        assert!(dir.path().join("manifest.json").exists());
    }
}
