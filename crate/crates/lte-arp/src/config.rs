//! Scenario configuration: cell parameters, signaling catalog, traffic model
//! and the bottleneck mask.
//!
//! A [`ScenarioSpec`] is the single experiment description shared by the
//! analytic engine, the simulator and the sweep harness. Scenarios load from
//! flat TOML files; unknown keys are rejected so typos fail loudly, and every
//! type invariant is checked before a spec is handed out.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Subframe duration is 1 ms, so per-second rates divide by this to become
/// per-subframe rates.
pub const SUBFRAMES_PER_SECOND: f64 = 1000.0;

/// Resource blocks the PRACH occupies in a random-access subframe.
pub const PRACH_RBS: u32 = 6;

/// Errors raised while loading or validating a scenario.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: &'static str, message: String },
}

impl ConfigError {
    fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field,
            message: message.into(),
        }
    }
}

/// LTE system bandwidth. Only the four FDD bandwidths the resource tables
/// cover are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bandwidth {
    Mhz1_4,
    Mhz5,
    Mhz10,
    Mhz20,
}

impl Bandwidth {
    pub fn mhz(self) -> f64 {
        match self {
            Bandwidth::Mhz1_4 => 1.4,
            Bandwidth::Mhz5 => 5.0,
            Bandwidth::Mhz10 => 10.0,
            Bandwidth::Mhz20 => 20.0,
        }
    }

    pub fn from_mhz(value: f64) -> Option<Self> {
        // Exact match: the parsed literal and `mhz()` share the same f64
        // constants, so equality is well defined.
        [
            Bandwidth::Mhz1_4,
            Bandwidth::Mhz5,
            Bandwidth::Mhz10,
            Bandwidth::Mhz20,
        ]
        .into_iter()
        .find(|b| b.mhz() == value)
    }

    /// Uplink/downlink resource blocks per subframe.
    pub fn default_rbs(self) -> u32 {
        match self {
            Bandwidth::Mhz1_4 => 6,
            Bandwidth::Mhz5 => 25,
            Bandwidth::Mhz10 => 50,
            Bandwidth::Mhz20 => 100,
        }
    }

    /// CCEs per subframe at CFI 3.
    pub fn cce_cfi3(self) -> u32 {
        match self {
            Bandwidth::Mhz1_4 => 6,
            Bandwidth::Mhz5 => 21,
            Bandwidth::Mhz10 => 43,
            Bandwidth::Mhz20 => 87,
        }
    }

    /// RAO spacing the evaluation scenarios pair with this bandwidth: one RAO
    /// per two frames in the narrowband cell, one every five subframes
    /// otherwise.
    pub fn default_delta_rao(self) -> u32 {
        match self {
            Bandwidth::Mhz1_4 => 20,
            _ => 5,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Bandwidth::Mhz1_4 => "1.4",
            Bandwidth::Mhz5 => "5",
            Bandwidth::Mhz10 => "10",
            Bandwidth::Mhz20 => "20",
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} MHz", self.label())
    }
}

impl FromStr for Bandwidth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1.4" => Ok(Bandwidth::Mhz1_4),
            "5" => Ok(Bandwidth::Mhz5),
            "10" => Ok(Bandwidth::Mhz10),
            "20" => Ok(Bandwidth::Mhz20),
            other => Err(format!(
                "unsupported bandwidth {other:?}; expected 1.4, 5, 10 or 20"
            )),
        }
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.mhz())
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Bandwidth::from_mhz(value).ok_or_else(|| {
            D::Error::custom(format!(
                "unsupported bandwidth_mhz {value}; expected 1.4, 5, 10 or 20"
            ))
        })
    }
}

/// How many PDCCH messages fit in a subframe.
///
/// `RawCce` counts raw CCEs (6 at 1.4 MHz, 21 at 5 MHz with CFI 3);
/// `Format1Messages` counts format-1 grants, each of which takes two CCEs.
/// Both are exposed because the control-channel budget can be stated either
/// way; the message count is what a scheduler actually hands out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdcchCapacityMode {
    RawCce,
    Format1Messages,
}

impl FromStr for PdcchCapacityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw-cce" => Ok(PdcchCapacityMode::RawCce),
            "format1-messages" => Ok(PdcchCapacityMode::Format1Messages),
            other => Err(format!(
                "unsupported PDCCH capacity mode {other:?}; expected raw-cce or format1-messages"
            )),
        }
    }
}

/// How PRACH resource blocks are charged against the PUSCH service rate in
/// the analytic model.
///
/// `FrameTotal` subtracts the total RAO resource blocks of a whole frame
/// (6 * 10 / delta_rao) from the per-subframe capacity; `SubframeAverage`
/// subtracts the per-subframe average (6 / delta_rao), which matches what the
/// simulator's explicit per-RAO reservation amounts to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RaoOverhead {
    FrameTotal,
    SubframeAverage,
}

impl FromStr for RaoOverhead {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frame-total" => Ok(RaoOverhead::FrameTotal),
            "subframe-average" => Ok(RaoOverhead::SubframeAverage),
            other => Err(format!(
                "unsupported RAO overhead model {other:?}; expected frame-total or subframe-average"
            )),
        }
    }
}

/// Which messages a transaction exchanges after the ARP.
///
/// `Short` is connection establishment plus the data report (RAR, RRC
/// request, RRC complete, data); `Full` adds the security and reconfiguration
/// handshake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalingMode {
    Short,
    Full,
}

impl FromStr for SignalingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "short" => Ok(SignalingMode::Short),
            "full" => Ok(SignalingMode::Full),
            other => Err(format!(
                "unsupported signaling mode {other:?}; expected short or full"
            )),
        }
    }
}

/// A channel that can act as a bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Prach,
    Pdcch,
    Pdsch,
    Pusch,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] = [
        ChannelKind::Prach,
        ChannelKind::Pdcch,
        ChannelKind::Pdsch,
        ChannelKind::Pusch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Prach => "prach",
            ChannelKind::Pdcch => "pdcch",
            ChannelKind::Pdsch => "pdsch",
            ChannelKind::Pusch => "pusch",
        }
    }
}

impl FromStr for ChannelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prach" => Ok(ChannelKind::Prach),
            "pdcch" => Ok(ChannelKind::Pdcch),
            "pdsch" => Ok(ChannelKind::Pdsch),
            "pusch" => Ok(ChannelKind::Pusch),
            other => Err(format!(
                "unknown channel {other:?}; expected prach, pdcch, pdsch or pusch"
            )),
        }
    }
}

/// Set of enabled bottlenecks. A disabled channel loses nothing: its loss
/// probability is forced to zero analytically and its capacity is infinite in
/// simulation. Disabling PRACH removes preamble contention entirely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimitMask(BTreeSet<ChannelKind>);

impl LimitMask {
    pub fn all() -> Self {
        LimitMask(ChannelKind::ALL.into_iter().collect())
    }

    pub fn from_channels(channels: impl IntoIterator<Item = ChannelKind>) -> Self {
        LimitMask(channels.into_iter().collect())
    }

    pub fn contains(&self, channel: ChannelKind) -> bool {
        self.0.contains(&channel)
    }

    pub fn is_all(&self) -> bool {
        self.0.len() == ChannelKind::ALL.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ChannelKind> + '_ {
        self.0.iter().copied()
    }
}

impl Default for LimitMask {
    fn default() -> Self {
        LimitMask::all()
    }
}

impl Serialize for LimitMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0
            .iter()
            .collect::<Vec<_>>()
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LimitMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let channels = Vec::<ChannelKind>::deserialize(deserializer)?;
        Ok(LimitMask(channels.into_iter().collect()))
    }
}

impl fmt::Display for LimitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|c| c.name()).collect();
        write!(f, "{}", names.join("+"))
    }
}

/// Radio resource parameters of the cell. All timers are in subframes (1 ms
/// granularity, so millisecond values carry over one to one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub bandwidth_mhz: Bandwidth,
    /// Uplink resource blocks per subframe.
    pub n_ulrb: u32,
    /// Downlink resource blocks per subframe.
    pub n_dlrb: u32,
    /// Control channel elements per subframe (CFI 3).
    pub n_cce: u32,
    pub pdcch_capacity_mode: PdcchCapacityMode,
    /// Contention preambles available per RAO.
    pub preambles: u32,
    /// Subframes between consecutive RAOs.
    pub delta_rao: u32,
    /// Maximum retransmissions, so `max_retransmissions + 1` MSG1
    /// transmissions are allowed before a transaction is dropped.
    pub max_retransmissions: u32,
    /// Backoff window in subframes; backoff draws are uniform over
    /// `[0, backoff_window - 1]`.
    pub backoff_window: u32,
    /// MSG2 window: the RAR must arrive within this many subframes of MSG1.
    pub t_rar: u32,
    /// Contention resolution timeout, counted from MSG1.
    pub t_crt: u32,
    /// Window for each post-ARP message.
    pub t_other: u32,
    /// eNodeB processing delay in subframes.
    pub proc_enb: u32,
    /// UE processing delay in subframes.
    pub proc_ue: u32,
    pub rao_overhead: RaoOverhead,
}

impl CellConfig {
    /// PDCCH messages servable per subframe under the configured counting
    /// mode.
    pub fn pdcch_capacity(&self) -> u32 {
        match self.pdcch_capacity_mode {
            PdcchCapacityMode::RawCce => self.n_cce,
            PdcchCapacityMode::Format1Messages => self.n_cce / 2,
        }
    }

    /// PUSCH resource blocks per subframe left after the PRACH overhead.
    /// `FrameTotal` can go negative for dense RAO configurations; callers
    /// treat a non-positive rate as a channel that serves nothing.
    pub fn pusch_capacity(&self) -> f64 {
        let overhead = match self.rao_overhead {
            RaoOverhead::FrameTotal => PRACH_RBS as f64 * 10.0 / self.delta_rao as f64,
            RaoOverhead::SubframeAverage => PRACH_RBS as f64 / self.delta_rao as f64,
        };
        self.n_ulrb as f64 - overhead
    }
}

/// Message sizes and shared radio constants for the signaling exchange.
/// Sizes are MAC-layer bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingCatalog {
    pub mode: SignalingMode,
    /// Random access response, per detected preamble.
    pub b_rar: u32,
    /// Bytes carried per resource block at the modeled modulation.
    pub b_rb: u32,
    /// RRC connection request (MSG3).
    pub b_req: u32,
    /// RRC connection setup (MSG4).
    pub b_conn: u32,
    /// RRC connection setup complete.
    pub b_comp: u32,
    /// RRC reconfiguration, downlink part.
    pub b_r_dl: u32,
    /// RRC reconfiguration complete, uplink part.
    pub b_r_ul: u32,
    /// Security mode command.
    pub b_s_cmd: u32,
    /// Security mode complete.
    pub b_s_comp: u32,
    /// Fragmentation threshold for uplink data grants, in resource blocks.
    pub n_frag: u32,
}

/// Aggregate traffic description. The canonical rate unit is messages per
/// subframe; per-second figures divide by 1000 on the way in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    /// Aggregate new-message rate in messages per subframe.
    pub rate_per_subframe: f64,
    /// Report payload in bytes.
    pub payload_bytes: u32,
    /// Device population the rate was derived from, if it was.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub devices: Option<u64>,
    /// Reporting interval in seconds, paired with `devices`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report_interval_s: Option<f64>,
}

impl TrafficConfig {
    pub fn rate_per_second(&self) -> f64 {
        self.rate_per_subframe * SUBFRAMES_PER_SECOND
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub cell: CellConfig,
    pub catalog: SignalingCatalog,
    pub traffic: TrafficConfig,
    pub limit_mask: LimitMask,
}

impl ScenarioSpec {
    /// Compact identifier used in CSV rows and log lines.
    pub fn id(&self) -> String {
        let mode = match self.catalog.mode {
            SignalingMode::Short => "short",
            SignalingMode::Full => "full",
        };
        let mut id = format!(
            "{}mhz-dr{}-{}-{}b-m{}",
            self.cell.bandwidth_mhz.label(),
            self.cell.delta_rao,
            mode,
            self.traffic.payload_bytes,
            self.cell.max_retransmissions,
        );
        if !self.limit_mask.is_all() {
            id.push_str("-mask-");
            id.push_str(&self.limit_mask.to_string());
        }
        id
    }

    /// Same scenario with a different arrival rate; used by sweeps.
    pub fn with_rate_per_subframe(&self, rate: f64) -> ScenarioSpec {
        let mut spec = self.clone();
        spec.traffic.rate_per_subframe = rate;
        spec.traffic.devices = None;
        spec.traffic.report_interval_s = None;
        spec
    }

    /// Serialize in the scenario file format. Loading the result back yields
    /// an identical spec.
    pub fn to_toml_string(&self) -> String {
        let file = ScenarioFile {
            cell: RawCell {
                bandwidth_mhz: Some(self.cell.bandwidth_mhz),
                n_ulrb: Some(self.cell.n_ulrb),
                n_dlrb: Some(self.cell.n_dlrb),
                n_cce: Some(self.cell.n_cce),
                pdcch_capacity_mode: Some(self.cell.pdcch_capacity_mode),
                preambles: Some(self.cell.preambles),
                delta_rao: Some(self.cell.delta_rao),
                max_retransmissions: Some(self.cell.max_retransmissions),
                backoff_window: Some(self.cell.backoff_window),
                t_rar: Some(self.cell.t_rar),
                t_crt: Some(self.cell.t_crt),
                t_other: Some(self.cell.t_other),
                proc_enb: Some(self.cell.proc_enb),
                proc_ue: Some(self.cell.proc_ue),
                rao_overhead: Some(self.cell.rao_overhead),
            },
            catalog: RawCatalog {
                mode: Some(self.catalog.mode),
                b_rar: Some(self.catalog.b_rar),
                b_rb: Some(self.catalog.b_rb),
                b_req: Some(self.catalog.b_req),
                b_conn: Some(self.catalog.b_conn),
                b_comp: Some(self.catalog.b_comp),
                b_r_dl: Some(self.catalog.b_r_dl),
                b_r_ul: Some(self.catalog.b_r_ul),
                b_s_cmd: Some(self.catalog.b_s_cmd),
                b_s_comp: Some(self.catalog.b_s_comp),
                n_frag: Some(self.catalog.n_frag),
            },
            traffic: RawTraffic {
                rate_per_subframe: if self.traffic.devices.is_some() {
                    None
                } else {
                    Some(self.traffic.rate_per_subframe)
                },
                rate_per_s: None,
                devices: self.traffic.devices,
                report_interval_s: self.traffic.report_interval_s,
                payload_bytes: Some(self.traffic.payload_bytes),
            },
            limit_mask: Some(self.limit_mask.clone()),
        };
        toml::to_string_pretty(&file).expect("scenario serialization cannot fail")
    }
}

/// On-disk scenario form: every key optional, defaults documented in the
/// README. Unknown keys are errors.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    cell: RawCell,
    #[serde(default)]
    catalog: RawCatalog,
    #[serde(default)]
    traffic: RawTraffic,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limit_mask: Option<LimitMask>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    bandwidth_mhz: Option<Bandwidth>,
    n_ulrb: Option<u32>,
    n_dlrb: Option<u32>,
    n_cce: Option<u32>,
    pdcch_capacity_mode: Option<PdcchCapacityMode>,
    preambles: Option<u32>,
    delta_rao: Option<u32>,
    max_retransmissions: Option<u32>,
    backoff_window: Option<u32>,
    t_rar: Option<u32>,
    t_crt: Option<u32>,
    t_other: Option<u32>,
    proc_enb: Option<u32>,
    proc_ue: Option<u32>,
    rao_overhead: Option<RaoOverhead>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    mode: Option<SignalingMode>,
    b_rar: Option<u32>,
    b_rb: Option<u32>,
    b_req: Option<u32>,
    b_conn: Option<u32>,
    b_comp: Option<u32>,
    b_r_dl: Option<u32>,
    b_r_ul: Option<u32>,
    b_s_cmd: Option<u32>,
    b_s_comp: Option<u32>,
    n_frag: Option<u32>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraffic {
    rate_per_subframe: Option<f64>,
    rate_per_s: Option<f64>,
    devices: Option<u64>,
    report_interval_s: Option<f64>,
    payload_bytes: Option<u32>,
}

/// Optional overrides applied on top of a scenario file (or the defaults)
/// before validation; this is how CLI flags reach the spec.
#[derive(Debug, Default, Clone)]
pub struct ScenarioOverrides {
    pub bandwidth: Option<Bandwidth>,
    pub delta_rao: Option<u32>,
    pub max_retransmissions: Option<u32>,
    pub pdcch_capacity_mode: Option<PdcchCapacityMode>,
    pub rao_overhead: Option<RaoOverhead>,
    pub signaling: Option<SignalingMode>,
    pub payload_bytes: Option<u32>,
    pub rate_per_subframe: Option<f64>,
    pub rate_per_s: Option<f64>,
    pub devices: Option<u64>,
    pub report_interval_s: Option<f64>,
    pub limit_mask: Option<LimitMask>,
}

/// Load a scenario from a TOML file, fill defaults and validate.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_str(&text)
}

/// Parse scenario text (the file format) without touching the filesystem.
pub fn scenario_from_str(text: &str) -> Result<ScenarioSpec, ConfigError> {
    let raw: ScenarioFile = toml::from_str(text)?;
    resolve(raw, &ScenarioOverrides::default())
}

/// The documented default scenario: a 5 MHz cell, one RAO every 5 subframes,
/// short signaling, 100-byte reports arriving at 1000 messages per second.
pub fn default_scenario() -> ScenarioSpec {
    resolve(ScenarioFile::default(), &ScenarioOverrides::default())
        .expect("default scenario is valid")
}

/// Build a scenario from an optional file plus overrides.
pub fn build_scenario(
    path: Option<&Path>,
    overrides: &ScenarioOverrides,
) -> Result<ScenarioSpec, ConfigError> {
    let raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text)?
        }
        None => ScenarioFile::default(),
    };
    resolve(raw, overrides)
}

fn resolve(raw: ScenarioFile, ov: &ScenarioOverrides) -> Result<ScenarioSpec, ConfigError> {
    let bandwidth = ov.bandwidth.or(raw.cell.bandwidth_mhz).unwrap_or(Bandwidth::Mhz5);
    let delta_rao = ov
        .delta_rao
        .or(raw.cell.delta_rao)
        .unwrap_or_else(|| bandwidth.default_delta_rao());

    let cell = CellConfig {
        bandwidth_mhz: bandwidth,
        n_ulrb: raw.cell.n_ulrb.unwrap_or_else(|| bandwidth.default_rbs()),
        n_dlrb: raw.cell.n_dlrb.unwrap_or_else(|| bandwidth.default_rbs()),
        n_cce: raw.cell.n_cce.unwrap_or_else(|| bandwidth.cce_cfi3()),
        pdcch_capacity_mode: ov
            .pdcch_capacity_mode
            .or(raw.cell.pdcch_capacity_mode)
            .unwrap_or(PdcchCapacityMode::Format1Messages),
        preambles: raw.cell.preambles.unwrap_or(54),
        delta_rao,
        max_retransmissions: ov
            .max_retransmissions
            .or(raw.cell.max_retransmissions)
            .unwrap_or(9),
        backoff_window: raw.cell.backoff_window.unwrap_or(20),
        t_rar: raw.cell.t_rar.unwrap_or(10),
        t_crt: raw.cell.t_crt.unwrap_or(40),
        t_other: raw.cell.t_other.unwrap_or(40),
        proc_enb: raw.cell.proc_enb.unwrap_or(3),
        proc_ue: raw.cell.proc_ue.unwrap_or(3),
        rao_overhead: ov
            .rao_overhead
            .or(raw.cell.rao_overhead)
            .unwrap_or(RaoOverhead::SubframeAverage),
    };

    let catalog = SignalingCatalog {
        mode: ov.signaling.or(raw.catalog.mode).unwrap_or(SignalingMode::Short),
        b_rar: raw.catalog.b_rar.unwrap_or(8),
        b_rb: raw.catalog.b_rb.unwrap_or(36),
        b_req: raw.catalog.b_req.unwrap_or(7),
        b_conn: raw.catalog.b_conn.unwrap_or(38),
        b_comp: raw.catalog.b_comp.unwrap_or(20),
        b_r_dl: raw.catalog.b_r_dl.unwrap_or(118),
        b_r_ul: raw.catalog.b_r_ul.unwrap_or(10),
        b_s_cmd: raw.catalog.b_s_cmd.unwrap_or(11),
        b_s_comp: raw.catalog.b_s_comp.unwrap_or(13),
        n_frag: raw.catalog.n_frag.unwrap_or(6),
    };

    let traffic = resolve_traffic(&raw.traffic, ov)?;
    let limit_mask = ov
        .limit_mask
        .clone()
        .or(raw.limit_mask)
        .unwrap_or_default();

    let spec = ScenarioSpec {
        cell,
        catalog,
        traffic,
        limit_mask,
    };
    validate(&spec)?;
    Ok(spec)
}

fn resolve_traffic(
    raw: &RawTraffic,
    ov: &ScenarioOverrides,
) -> Result<TrafficConfig, ConfigError> {
    // Overrides replace the file's rate specification wholesale.
    let (per_subframe, per_s, devices, interval) = if ov.rate_per_subframe.is_some()
        || ov.rate_per_s.is_some()
        || ov.devices.is_some()
    {
        (
            ov.rate_per_subframe,
            ov.rate_per_s,
            ov.devices,
            ov.report_interval_s,
        )
    } else {
        (
            raw.rate_per_subframe,
            raw.rate_per_s,
            raw.devices,
            raw.report_interval_s,
        )
    };

    let sources = per_subframe.is_some() as u8 + per_s.is_some() as u8 + devices.is_some() as u8;
    if sources > 1 {
        return Err(ConfigError::invalid(
            "traffic",
            "specify at most one of rate_per_subframe, rate_per_s, devices",
        ));
    }

    let (rate_per_subframe, devices, report_interval_s) = if let Some(n) = devices {
        let interval = interval.ok_or_else(|| {
            ConfigError::invalid(
                "traffic.report_interval_s",
                "required when devices is given",
            )
        })?;
        if interval <= 0.0 {
            return Err(ConfigError::invalid(
                "traffic.report_interval_s",
                format!("must be positive, got {interval}"),
            ));
        }
        (
            n as f64 / (interval * SUBFRAMES_PER_SECOND),
            Some(n),
            Some(interval),
        )
    } else if let Some(r) = per_s {
        (r / SUBFRAMES_PER_SECOND, None, None)
    } else {
        (per_subframe.unwrap_or(1.0), None, None)
    };

    Ok(TrafficConfig {
        rate_per_subframe,
        payload_bytes: ov.payload_bytes.or(raw.payload_bytes).unwrap_or(100),
        devices,
        report_interval_s,
    })
}

fn validate(spec: &ScenarioSpec) -> Result<(), ConfigError> {
    let cell = &spec.cell;
    if cell.preambles < 1 {
        return Err(ConfigError::invalid(
            "cell.preambles",
            "at least one contention preamble is required",
        ));
    }
    if !(1..=20).contains(&cell.delta_rao) {
        return Err(ConfigError::invalid(
            "cell.delta_rao",
            format!("must be in [1, 20], got {}", cell.delta_rao),
        ));
    }
    let expected_cce = cell.bandwidth_mhz.cce_cfi3();
    if cell.n_cce != expected_cce {
        return Err(ConfigError::invalid(
            "cell.n_cce",
            format!(
                "{} CCEs per subframe is inconsistent with {} at CFI 3 (expected {})",
                cell.n_cce, cell.bandwidth_mhz, expected_cce
            ),
        ));
    }
    if cell.t_rar > cell.t_crt {
        return Err(ConfigError::invalid(
            "cell.t_rar",
            format!(
                "MSG2 window ({}) cannot exceed the contention timeout ({})",
                cell.t_rar, cell.t_crt
            ),
        ));
    }
    for (field, value) in [
        ("cell.n_ulrb", cell.n_ulrb),
        ("cell.n_dlrb", cell.n_dlrb),
        ("cell.backoff_window", cell.backoff_window),
        ("cell.t_rar", cell.t_rar),
        ("cell.t_crt", cell.t_crt),
        ("cell.t_other", cell.t_other),
    ] {
        if value == 0 {
            return Err(ConfigError::invalid(field, "must be positive"));
        }
    }

    let cat = &spec.catalog;
    for (field, value) in [
        ("catalog.b_rar", cat.b_rar),
        ("catalog.b_rb", cat.b_rb),
        ("catalog.b_req", cat.b_req),
        ("catalog.b_conn", cat.b_conn),
        ("catalog.b_comp", cat.b_comp),
        ("catalog.b_r_dl", cat.b_r_dl),
        ("catalog.b_r_ul", cat.b_r_ul),
        ("catalog.b_s_cmd", cat.b_s_cmd),
        ("catalog.b_s_comp", cat.b_s_comp),
        ("catalog.n_frag", cat.n_frag),
    ] {
        if value == 0 {
            return Err(ConfigError::invalid(field, "must be positive"));
        }
    }

    if !(spec.traffic.rate_per_subframe > 0.0) || !spec.traffic.rate_per_subframe.is_finite() {
        return Err(ConfigError::invalid(
            "traffic.rate_per_subframe",
            format!(
                "must be a positive finite rate, got {}",
                spec.traffic.rate_per_subframe
            ),
        ));
    }
    if spec.traffic.payload_bytes == 0 {
        return Err(ConfigError::invalid(
            "traffic.payload_bytes",
            "must be positive",
        ));
    }

    if spec.limit_mask.is_empty() {
        return Err(ConfigError::invalid(
            "limit_mask",
            "at least one bottleneck must stay enabled",
        ));
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_scenario() {
        let spec = default_scenario();
        assert_eq!(spec.cell.bandwidth_mhz, Bandwidth::Mhz5);
        assert_eq!(spec.cell.n_ulrb, 25);
        assert_eq!(spec.cell.n_dlrb, 25);
        assert_eq!(spec.cell.n_cce, 21);
        assert_eq!(spec.cell.preambles, 54);
        assert_eq!(spec.cell.delta_rao, 5);
        assert_eq!(spec.cell.max_retransmissions, 9);
        assert_eq!(spec.cell.backoff_window, 20);
        assert_eq!(spec.cell.t_rar, 10);
        assert_eq!(spec.cell.t_crt, 40);
        assert_eq!(spec.cell.t_other, 40);
        assert_eq!(spec.cell.proc_enb, 3);
        assert_eq!(spec.cell.proc_ue, 3);
        assert_eq!(spec.traffic.rate_per_subframe, 1.0);
        assert_eq!(spec.traffic.payload_bytes, 100);
        assert!(spec.limit_mask.is_all());
    }

    #[test]
    fn default_catalog_sizes() {
        let cat = default_scenario().catalog;
        assert_eq!(cat.b_rar, 8);
        assert_eq!(cat.b_rb, 36);
        assert_eq!(cat.b_req, 7);
        assert_eq!(cat.b_conn, 38);
        assert_eq!(cat.b_comp, 20);
        assert_eq!(cat.b_r_dl, 118);
        assert_eq!(cat.b_r_ul, 10);
        assert_eq!(cat.b_s_cmd, 11);
        assert_eq!(cat.b_s_comp, 13);
        assert_eq!(cat.n_frag, 6);
    }

    #[test]
    fn paper_table_scenario_loads() {
        let spec = scenario_from_str(
            r#"
            [cell]
            bandwidth_mhz = 5.0
            delta_rao = 5
            preambles = 54
            max_retransmissions = 9
            "#,
        )
        .unwrap();
        assert_eq!(spec.cell.n_cce, 21);
        assert_eq!(spec.cell.preambles, 54);
        assert_eq!(spec.cell.delta_rao, 5);
        assert_eq!(spec.cell.max_retransmissions, 9);
    }

    #[test]
    fn delta_rao_out_of_range_is_rejected() {
        let err = scenario_from_str("[cell]\ndelta_rao = 25\n").unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "cell.delta_rao"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(scenario_from_str("[cell]\ndelta_rao_ms = 5\n").is_err());
        assert!(scenario_from_str("[cel]\ndelta_rao = 5\n").is_err());
    }

    #[test]
    fn inconsistent_cce_count_is_rejected() {
        let err = scenario_from_str("[cell]\nn_cce = 8\n").unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "cell.n_cce"),
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn rate_per_second_divides_by_1000() {
        let spec = scenario_from_str("[traffic]\nrate_per_s = 4000.0\n").unwrap();
        assert_eq!(spec.traffic.rate_per_subframe, 4.0);
    }

    #[test]
    fn device_population_derives_rate() {
        let spec = scenario_from_str(
            "[traffic]\ndevices = 30000\nreport_interval_s = 10.0\n",
        )
        .unwrap();
        assert_eq!(spec.traffic.rate_per_subframe, 3.0);
        assert_eq!(spec.traffic.devices, Some(30000));
    }

    #[test]
    fn conflicting_rate_sources_are_rejected() {
        assert!(scenario_from_str("[traffic]\nrate_per_s = 1.0\nrate_per_subframe = 0.001\n")
            .is_err());
    }

    #[test]
    fn devices_without_interval_is_rejected() {
        assert!(scenario_from_str("[traffic]\ndevices = 100\n").is_err());
    }

    #[test]
    fn narrowband_defaults_pair_with_sparse_raos() {
        let spec = scenario_from_str("[cell]\nbandwidth_mhz = 1.4\n").unwrap();
        assert_eq!(spec.cell.delta_rao, 20);
        assert_eq!(spec.cell.n_ulrb, 6);
        assert_eq!(spec.cell.n_cce, 6);
    }

    #[test]
    fn pdcch_capacity_modes() {
        let mut spec = scenario_from_str("[cell]\nbandwidth_mhz = 1.4\n").unwrap();
        spec.cell.pdcch_capacity_mode = PdcchCapacityMode::Format1Messages;
        assert_eq!(spec.cell.pdcch_capacity(), 3);
        spec.cell.pdcch_capacity_mode = PdcchCapacityMode::RawCce;
        assert_eq!(spec.cell.pdcch_capacity(), 6);

        let mut spec5 = default_scenario();
        spec5.cell.pdcch_capacity_mode = PdcchCapacityMode::RawCce;
        assert_eq!(spec5.cell.pdcch_capacity(), 21);

        // Degenerate CCE budget serves nothing in either mode.
        let mut empty = default_scenario();
        empty.cell.n_cce = 0;
        assert_eq!(empty.cell.pdcch_capacity(), 0);
        empty.cell.pdcch_capacity_mode = PdcchCapacityMode::Format1Messages;
        assert_eq!(empty.cell.pdcch_capacity(), 0);
    }

    #[test]
    fn format1_capacity_is_half_of_raw() {
        for bw in [
            Bandwidth::Mhz1_4,
            Bandwidth::Mhz5,
            Bandwidth::Mhz10,
            Bandwidth::Mhz20,
        ] {
            let mut spec = default_scenario();
            spec.cell.bandwidth_mhz = bw;
            spec.cell.n_cce = bw.cce_cfi3();
            spec.cell.pdcch_capacity_mode = PdcchCapacityMode::RawCce;
            let raw = spec.cell.pdcch_capacity();
            spec.cell.pdcch_capacity_mode = PdcchCapacityMode::Format1Messages;
            assert_eq!(spec.cell.pdcch_capacity(), raw / 2);
        }
    }

    #[test]
    fn pusch_capacity_models() {
        let spec = default_scenario();
        let mut cell = spec.cell.clone();
        cell.rao_overhead = RaoOverhead::FrameTotal;
        assert_eq!(cell.pusch_capacity(), 25.0 - 12.0);
        cell.rao_overhead = RaoOverhead::SubframeAverage;
        assert_eq!(cell.pusch_capacity(), 25.0 - 1.2);
        // Dense RAOs can exhaust the frame-total budget.
        cell.rao_overhead = RaoOverhead::FrameTotal;
        cell.delta_rao = 1;
        assert!(cell.pusch_capacity() < 0.0);
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let spec = scenario_from_str(
            r#"
            [cell]
            bandwidth_mhz = 1.4
            delta_rao = 10
            max_retransmissions = 2

            [catalog]
            mode = "full"

            [traffic]
            devices = 12345
            report_interval_s = 10.0
            payload_bytes = 1000

            limit_mask = ["prach", "pusch"]
            "#,
        )
        .unwrap();
        let text = spec.to_toml_string();
        let reloaded = scenario_from_str(&text).unwrap();
        assert_eq!(spec, reloaded);

        // And once more through the resolved default.
        let spec = default_scenario();
        let reloaded = scenario_from_str(&spec.to_toml_string()).unwrap();
        assert_eq!(spec, reloaded);
    }

    #[test]
    fn scenario_id_is_stable() {
        let spec = default_scenario();
        assert_eq!(spec.id(), "5mhz-dr5-short-100b-m9");
        let masked = ScenarioSpec {
            limit_mask: LimitMask::from_channels([ChannelKind::Prach]),
            ..spec
        };
        assert_eq!(masked.id(), "5mhz-dr5-short-100b-m9-mask-prach");
    }

    #[test]
    fn empty_limit_mask_is_rejected() {
        assert!(scenario_from_str("limit_mask = []\n").is_err());
    }
}
