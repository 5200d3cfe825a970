//! Tick-based simulation of users reacting to prices and poor service:
//! arrivals, pricing, best responses, throttled delivery, waiting clocks and
//! discharges.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::market::{link_loads, ClusterId, LinkId, Market, MarketError, User, UserId, UserState, FEASIBILITY_EPS};
use crate::multilink::{distribute_bid, route_weights};
use crate::num::{PriceState, StepPolicy};
use crate::report::fmt2;
use crate::scenario::{BidSource, Scenario};
use crate::utility::{degraded_utility, UtilityError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("fixed price must be finite and >= 0, got {0}")]
    InvalidPrice(f64),
    #[error("dwell must be at least one tick")]
    ZeroDwell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// The same price on every priced link, from the first tick.
    Fixed { price: f64 },
    /// Engage at the lowest candidate once a link congests; step to the
    /// next candidate whenever the link is still over capacity after users
    /// have reacted and the current price has been held `dwell` ticks.
    Micc { dwell: u32 },
    /// Walk every candidate from the lowest, holding each for `dwell` ticks
    /// (less if the link is still congested).
    Progressive { dwell: u32 },
    /// One dual update per tick on every link.
    Subgradient { step: StepPolicy },
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Fixed { price } => format!("fixed@{price}"),
            Strategy::Micc { dwell } => format!("micc(dwell={dwell})"),
            Strategy::Progressive { dwell } => format!("progressive(dwell={dwell})"),
            Strategy::Subgradient { step } => format!("subgradient(sigma0={})", step.sigma0),
        }
    }
}

/// A link price as reported: a number, or no affordable price at all.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum LinkPrice {
    Finite(f64),
    Unaffordable,
}

impl LinkPrice {
    pub fn from_f64(v: f64) -> Self {
        if v.is_finite() {
            LinkPrice::Finite(v)
        } else {
            LinkPrice::Unaffordable
        }
    }

    pub fn value(self) -> f64 {
        match self {
            LinkPrice::Finite(v) => v,
            LinkPrice::Unaffordable => f64::INFINITY,
        }
    }
}

impl Serialize for LinkPrice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LinkPrice::Finite(v) => s.serialize_f64(*v),
            LinkPrice::Unaffordable => s.serialize_str("unaffordable"),
        }
    }
}

impl<'de> Deserialize<'de> for LinkPrice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(LinkPrice::Finite(v)),
            Raw::Text(t) if t == "unaffordable" => Ok(LinkPrice::Unaffordable),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected price `{t}`"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DischargeReason {
    /// Poor service outweighed the utility of staying.
    Dissatisfied,
    /// The route price exceeds budget plus slack.
    PriceTooHigh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Arrived { cluster: ClusterId },
    Waiting { rate: f64 },
    Recovered { rate: f64 },
    Discharged { reason: DischargeReason, rate: f64 },
    PriceChanged { link: LinkId, price: LinkPrice },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user: Option<UserId>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickUser {
    pub id: UserId,
    pub cluster: ClusterId,
    pub route_price: LinkPrice,
    pub demand: f64,
    pub rate: f64,
    pub waiting: u64,
    pub state: UserState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub link_prices: Vec<LinkPrice>,
    /// Offered load before throttling.
    pub demand_loads: Vec<f64>,
    /// Delivered load.
    pub link_loads: Vec<f64>,
    /// Offered load of the users still present after this tick's discharges.
    pub post_demand_loads: Vec<f64>,
    pub total_flow: f64,
    pub revenue: f64,
    /// Every link can carry `post_demand_loads`.
    pub feasible: bool,
    pub users: Vec<TickUser>,
    pub active_by_cluster: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
enum LinkControl {
    Idle,
    Engaged { held: u32, tried: usize },
    Exhausted,
}

/// Per-strategy bookkeeping carried between ticks.
#[derive(Clone, Debug, PartialEq)]
struct Controller {
    links: Vec<LinkControl>,
    duals: Vec<PriceState>,
}

pub struct SimState {
    pub tick: u64,
    pub market: Market,
    pub link_prices: Vec<f64>,
    /// Consecutive ticks of poor service, aligned with `market.users`.
    pub waiting_clock: Vec<u64>,
    pub event_log: Vec<Event>,
    strategy: Strategy,
    control: Controller,
}

impl SimState {
    pub fn new(scenario: &Scenario, strategy: Strategy) -> Result<Self, SimError> {
        match &strategy {
            Strategy::Fixed { price } if !(price.is_finite() && *price >= 0.0) => {
                return Err(SimError::InvalidPrice(*price))
            }
            Strategy::Micc { dwell: 0 } | Strategy::Progressive { dwell: 0 } => return Err(SimError::ZeroDwell),
            _ => {}
        }
        let market = scenario.market();
        let n_links = market.topology.links().len();
        let lambda_min = market.lambda_min;
        let n_users = market.users.len();
        Ok(SimState {
            tick: 0,
            market,
            link_prices: vec![lambda_min; n_links],
            waiting_clock: vec![0; n_users],
            event_log: Vec::new(),
            strategy,
            control: Controller {
                links: vec![LinkControl::Idle; n_links],
                duals: (0..n_links).map(|_| PriceState::new(lambda_min)).collect(),
            },
        })
    }

    pub fn users(&self) -> &[User] {
        &self.market.users
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    /// Candidate prices for `link`, ascending.
    fn candidates(&self, scenario: &Scenario, link: LinkId, rates: &[f64]) -> Result<Vec<f64>, SimError> {
        let mut c = match scenario.pricing.bid_source {
            BidSource::Declared => match &scenario.pricing.price_set {
                Some(set) => set.clone(),
                None => self.market.users.iter().filter(|u| u.is_present()).map(|u| u.bid_price().value()).collect(),
            },
            BidSource::Distributed => {
                let topo = &self.market.topology;
                let mut shares = Vec::new();
                for u in self.market.users.iter().filter(|u| u.is_present() && topo.traverses(u.route, link)) {
                    let w = route_weights(topo, &self.market.users, rates, u.route)?;
                    let d = distribute_bid(u.bid_price(), &w, scenario.pricing.distribution);
                    shares.extend(d.share_on(link));
                }
                shares
            }
        };
        c.sort_by(f64::total_cmp);
        Ok(c)
    }

    fn next_candidate(&self, scenario: &Scenario, link: LinkId, rates: &[f64]) -> Result<Option<f64>, SimError> {
        let current = self.link_prices[link.index()];
        let floor = self.market.lambda_min;
        let engaged = matches!(self.control.links[link.index()], LinkControl::Engaged { .. });
        Ok(self
            .candidates(scenario, link, rates)?
            .into_iter()
            .map(|c| c.max(floor))
            .find(|&c| if engaged { c > current + 1e-12 } else { c >= floor }))
    }

    fn set_price(&mut self, link: LinkId, price: f64) {
        if self.link_prices[link.index()] != price {
            self.link_prices[link.index()] = price;
            self.event_log.push(Event {
                tick: self.tick,
                user: None,
                kind: EventKind::PriceChanged { link, price: LinkPrice::from_f64(price) },
            });
        }
    }

    fn engage(&mut self, scenario: &Scenario, link: LinkId, rates: &[f64]) -> Result<(), SimError> {
        match self.next_candidate(scenario, link, rates)? {
            Some(p) => {
                self.control.links[link.index()] = LinkControl::Engaged { held: 0, tried: 1 };
                self.set_price(link, p);
            }
            None => self.exhaust(link),
        }
        Ok(())
    }

    fn advance(&mut self, scenario: &Scenario, link: LinkId, rates: &[f64]) -> Result<bool, SimError> {
        let tried = match self.control.links[link.index()] {
            LinkControl::Engaged { tried, .. } => tried,
            _ => return Ok(false),
        };
        match self.next_candidate(scenario, link, rates)? {
            Some(p) => {
                self.control.links[link.index()] = LinkControl::Engaged { held: 0, tried: tried + 1 };
                self.set_price(link, p);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn exhaust(&mut self, link: LinkId) {
        self.control.links[link.index()] = LinkControl::Exhausted;
        self.set_price(link, f64::INFINITY);
    }

    fn offered(&self) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let demand = self.market.demands(&self.link_prices)?;
        let loads = link_loads(&self.market.topology, &self.market.users, &demand)?;
        Ok((demand, loads))
    }

    /// Prices in force this tick.
    fn price_tick(&mut self, scenario: &Scenario) -> Result<(), SimError> {
        let priced = self.market.priced_links.clone();
        match self.strategy.clone() {
            Strategy::Fixed { price } => {
                for l in priced {
                    self.set_price(l, price.max(self.market.lambda_min));
                }
            }
            Strategy::Micc { .. } => {
                let idle: Vec<LinkId> =
                    priced.into_iter().filter(|l| self.control.links[l.index()] == LinkControl::Idle).collect();
                if idle.is_empty() {
                    return Ok(());
                }
                let (demand, loads) = self.offered()?;
                for l in idle {
                    if loads[l.index()] > self.market.topology.link(l).capacity + FEASIBILITY_EPS {
                        self.engage(scenario, l, &demand)?;
                    }
                }
            }
            Strategy::Progressive { .. } => {
                if self.tick == 1 {
                    let (demand, _) = self.offered()?;
                    for l in priced {
                        self.engage(scenario, l, &demand)?;
                    }
                }
            }
            Strategy::Subgradient { .. } => {
                for i in 0..self.link_prices.len() {
                    let p = self.control.duals[i].lambda;
                    self.set_price(LinkId(i), p);
                }
            }
        }
        Ok(())
    }

    fn update_controller(&mut self, scenario: &Scenario, post: &[f64], post_loads: &[f64]) -> Result<(), SimError> {
        let caps = self.market.capacities();
        match self.strategy.clone() {
            Strategy::Fixed { .. } => {}
            Strategy::Micc { dwell } | Strategy::Progressive { dwell } => {
                let progressive = matches!(self.strategy, Strategy::Progressive { .. });
                for l in self.market.priced_links.clone() {
                    let LinkControl::Engaged { held, tried } = self.control.links[l.index()] else {
                        continue;
                    };
                    let held = held + 1;
                    self.control.links[l.index()] = LinkControl::Engaged { held, tried };
                    let congested = post_loads[l.index()] > caps[l.index()] + FEASIBILITY_EPS;
                    if progressive {
                        if congested || held >= dwell {
                            self.advance(scenario, l, post)?;
                        }
                    } else if congested && held >= dwell && !self.advance(scenario, l, post)? {
                        self.exhaust(l);
                    }
                }
            }
            Strategy::Subgradient { step } => {
                for (i, d) in self.control.duals.iter_mut().enumerate() {
                    d.update(&step, caps[i], post_loads[i]);
                }
            }
        }
        Ok(())
    }

    /// Advance one tick.
    pub fn step(&mut self, scenario: &Scenario) -> Result<TickRecord, SimError> {
        self.tick += 1;
        let tick = self.tick;

        for a in scenario.arrivals.iter().filter(|a| a.tick == tick) {
            let cluster = &scenario.clusters[a.cluster.index()];
            for _ in 0..a.count {
                let id = UserId(self.market.users.len() as u32);
                self.market.users.push(cluster.spawn(id, a.cluster)?);
                self.waiting_clock.push(0);
                self.event_log.push(Event { tick, user: Some(id), kind: EventKind::Arrived { cluster: a.cluster } });
            }
        }

        self.price_tick(scenario)?;

        let topo = &self.market.topology;
        let route_prices: Vec<f64> =
            self.market.users.iter().map(|u| topo.route_price(u.route, &self.link_prices)).collect();
        let (demand, demand_loads) = self.offered()?;
        let caps = self.market.capacities();
        let throttle: Vec<f64> = demand_loads
            .iter()
            .zip(&caps)
            .map(|(&d, &c)| if d > c + FEASIBILITY_EPS { c / d } else { 1.0 })
            .collect();

        let present: Vec<bool> = self.market.users.iter().map(|u| u.is_present()).collect();
        let mut delivered = vec![0.0; self.market.users.len()];
        let mut events = Vec::new();
        for (i, u) in self.market.users.iter_mut().enumerate() {
            if !present[i] {
                continue;
            }
            let rp = route_prices[i];
            if !u.can_afford(rp) {
                u.state = UserState::Discharged;
                events.push(Event {
                    tick,
                    user: Some(u.id),
                    kind: EventKind::Discharged { reason: DischargeReason::PriceTooHigh, rate: 0.0 },
                });
                continue;
            }
            let f = topo.route(u.route).links.iter().map(|l| throttle[l.index()]).fold(1.0, f64::min);
            let x = demand[i] * f;
            delivered[i] = x;
            let poor = x < (1.0 - u.patience.qos_slack) * u.min_bandwidth - 1e-12 || f < 1.0;
            if poor {
                self.waiting_clock[i] += 1;
                if u.state == UserState::Active {
                    u.state = UserState::Waiting;
                    events.push(Event { tick, user: Some(u.id), kind: EventKind::Waiting { rate: x } });
                }
            } else {
                self.waiting_clock[i] = 0;
                if u.state == UserState::Waiting {
                    u.state = UserState::Active;
                    events.push(Event { tick, user: Some(u.id), kind: EventKind::Recovered { rate: x } });
                }
            }
            // with a zero price the utility is undefined and nobody is charged
            if poor && rp > 0.0 {
                let t = self.waiting_clock[i] as f64;
                // valued at the rate the user asked for: at a delivered rate
                // of zero the budget term would dwarf any dissatisfaction
                let v = degraded_utility(demand[i], rp, t, u, &self.market.utility)?;
                if v < u.patience.discharge_threshold {
                    u.state = UserState::Discharged;
                    events.push(Event {
                        tick,
                        user: Some(u.id),
                        kind: EventKind::Discharged { reason: DischargeReason::Dissatisfied, rate: x },
                    });
                }
            }
        }
        self.event_log.extend(events);

        let post: Vec<f64> = self
            .market
            .users
            .iter()
            .zip(&demand)
            .map(|(u, &d)| if u.is_present() { d } else { 0.0 })
            .collect();
        let post_loads = link_loads(&self.market.topology, &self.market.users, &post)?;
        let delivered_loads = {
            let mut loads = vec![0.0; caps.len()];
            for (u, &x) in self.market.users.iter().zip(&delivered) {
                for l in &self.market.topology.route(u.route).links {
                    loads[l.index()] += x;
                }
            }
            loads
        };
        let feasible = post_loads.iter().zip(&caps).all(|(&l, &c)| l <= c + FEASIBILITY_EPS);
        let total_flow: f64 = delivered.iter().sum();
        let revenue: f64 =
            delivered.iter().zip(&route_prices).filter(|(&x, _)| x > 0.0).map(|(&x, &p)| x * p).sum();

        let mut active_by_cluster = vec![0; scenario.clusters.len()];
        let mut users = Vec::new();
        for (i, u) in self.market.users.iter().enumerate() {
            if u.is_present() {
                active_by_cluster[u.cluster.index()] += 1;
            }
            if present[i] {
                users.push(TickUser {
                    id: u.id,
                    cluster: u.cluster,
                    route_price: LinkPrice::from_f64(route_prices[i]),
                    demand: demand[i],
                    rate: delivered[i],
                    waiting: self.waiting_clock[i],
                    state: u.state,
                });
            }
        }
        let record = TickRecord {
            tick,
            link_prices: self.link_prices.iter().map(|&p| LinkPrice::from_f64(p)).collect(),
            demand_loads,
            link_loads: delivered_loads,
            post_demand_loads: post_loads.clone(),
            total_flow,
            revenue,
            feasible,
            users,
            active_by_cluster,
        };
        self.update_controller(scenario, &post, &post_loads)?;
        Ok(record)
    }
}

/// A price level as held by the first priced link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub index: usize,
    pub price: LinkPrice,
    pub first_tick: u64,
    pub last_tick: u64,
    /// Revenue, flow and population at the level's last tick.
    pub revenue: f64,
    pub total_flow: f64,
    pub post_demand_loads: Vec<f64>,
    pub feasible: bool,
    pub active_by_cluster: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scenario: String,
    pub strategy: Strategy,
    pub links: Vec<String>,
    pub priced_links: Vec<LinkId>,
    pub clusters: Vec<String>,
    pub ticks: Vec<TickRecord>,
    pub events: Vec<Event>,
    pub final_users: Vec<User>,
}

impl SimTrace {
    pub fn last(&self) -> &TickRecord {
        self.ticks.last().expect("a run has at least one tick")
    }

    pub fn tick(&self, tick: u64) -> Option<&TickRecord> {
        self.ticks.iter().find(|t| t.tick == tick)
    }

    /// Consecutive runs of the first priced link's price.
    pub fn levels(&self) -> Vec<LevelSummary> {
        let link = self.priced_links.first().map(|l| l.index()).unwrap_or(0);
        let mut out: Vec<LevelSummary> = Vec::new();
        for t in &self.ticks {
            let price = t.link_prices[link];
            let summary = |index| LevelSummary {
                index,
                price,
                first_tick: t.tick,
                last_tick: t.tick,
                revenue: t.revenue,
                total_flow: t.total_flow,
                post_demand_loads: t.post_demand_loads.clone(),
                feasible: t.feasible,
                active_by_cluster: t.active_by_cluster.clone(),
            };
            match out.last_mut() {
                Some(last) if last.price == price => {
                    let first = last.first_tick;
                    *last = LevelSummary { first_tick: first, ..summary(last.index) };
                }
                _ => out.push(summary(out.len())),
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialises")
    }

    /// One row per tick: prices on priced links, flow, revenue and the
    /// number of users present in each cluster.
    pub fn summary_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["tick".to_string()];
        header.extend(self.priced_links.iter().map(|l| format!("price_{}", self.links[l.index()])));
        header.extend(["total_flow".to_string(), "revenue".to_string(), "feasible".to_string()]);
        header.extend(self.clusters.iter().map(|c| format!("active_{c}")));
        w.write_record(&header)?;
        for t in &self.ticks {
            let mut row = vec![t.tick.to_string()];
            row.extend(self.priced_links.iter().map(|l| fmt2(t.link_prices[l.index()].value())));
            row.extend([fmt2(t.total_flow), fmt2(t.revenue), t.feasible.to_string()]);
            row.extend(t.active_by_cluster.iter().map(|n| n.to_string()));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Candidate-by-candidate view of the priced levels.
    pub fn candidate_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["candidate_index".to_string(), "price".to_string()];
        header.extend(self.links.iter().map(|l| format!("load_{l}")));
        header.push("feasible".into());
        w.write_record(&header)?;
        for lv in self.levels() {
            let mut row = vec![lv.index.to_string(), fmt2(lv.price.value())];
            row.extend(lv.post_demand_loads.iter().map(|&l| fmt2(l)));
            row.push(lv.feasible.to_string());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Run `horizon` ticks.
pub fn run(scenario: &Scenario, strategy: Strategy, horizon: u64) -> Result<SimTrace, SimError> {
    let mut state = SimState::new(scenario, strategy.clone())?;
    let mut ticks = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        ticks.push(state.step(scenario)?);
    }
    Ok(SimTrace {
        scenario: scenario.name.clone(),
        strategy,
        links: scenario.topology.links().iter().map(|l| l.name.clone()).collect(),
        priced_links: scenario.pricing.priced_links.clone(),
        clusters: scenario.clusters.iter().map(|c| c.label.clone()).collect(),
        ticks,
        events: state.event_log,
        final_users: state.market.users,
    })
}

/// Rebuild every user's final state from the initial population and the
/// event log alone.
pub fn replay_states(scenario: &Scenario, events: &[Event]) -> Vec<(UserId, UserState)> {
    let mut users: Vec<(UserId, UserState)> =
        scenario.initial_users().into_iter().map(|u| (u.id, u.state)).collect();
    for e in events {
        match (&e.kind, e.user) {
            (EventKind::Arrived { .. }, Some(id)) => users.push((id, UserState::Active)),
            (EventKind::Waiting { .. }, Some(id)) => users[id.index()].1 = UserState::Waiting,
            (EventKind::Recovered { .. }, Some(id)) => users[id.index()].1 = UserState::Active,
            (EventKind::Discharged { .. }, Some(id)) => users[id.index()].1 = UserState::Discharged,
            _ => {}
        }
    }
    users
}

#[cfg(test)]
mod tests {
    use super::*;

    fn active(t: &TickRecord) -> Vec<usize> {
        t.active_by_cluster.clone()
    }

    #[test]
    fn link_price_serialises_unaffordable_as_text() {
        let v = serde_json::to_string(&vec![LinkPrice::Finite(6.0), LinkPrice::Unaffordable]).unwrap();
        assert_eq!(v, r#"[6.0,"unaffordable"]"#);
        let back: Vec<LinkPrice> = serde_json::from_str(&v).unwrap();
        assert_eq!(back[1], LinkPrice::Unaffordable);
    }

    #[test]
    fn micc_settles_at_six() {
        let s = Scenario::table1();
        let trace = run(&s, Strategy::Micc { dwell: 1 }, 5).unwrap();
        let prices: Vec<f64> = trace.ticks.iter().map(|t| t.link_prices[0].value()).collect();
        assert_eq!(&prices[..3], &[2.0, 4.0, 6.0]);
        assert!(trace.ticks[2].feasible);
        assert_eq!(active(&trace.ticks[2]), vec![5, 5, 5, 0, 0]);
    }

    #[test]
    fn fixed_price_is_constant() {
        let s = Scenario::table1();
        let trace = run(&s, Strategy::Fixed { price: 10.0 }, 4).unwrap();
        assert!(trace.ticks.iter().all(|t| t.link_prices[0] == LinkPrice::Finite(10.0)));
        // unpriced links stay at the floor
        assert!(trace.ticks.iter().all(|t| t.link_prices[1] == LinkPrice::Finite(0.0)));
    }

    #[test]
    fn discharged_users_stay_out() {
        let s = Scenario::table1();
        let trace = run(&s, Strategy::Fixed { price: 10.0 }, 6).unwrap();
        let gone: Vec<UserId> = trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Discharged { .. }))
            .filter_map(|e| e.user)
            .collect();
        assert!(!gone.is_empty());
        for t in &trace.ticks {
            for u in &t.users {
                let left = trace.events.iter().find(|e| {
                    e.user == Some(u.id) && matches!(e.kind, EventKind::Discharged { .. })
                });
                if let Some(e) = left {
                    assert!(t.tick <= e.tick, "user {} reappeared", u.id);
                }
            }
        }
    }

    #[test]
    fn replay_matches_final_state() {
        let s = Scenario::table1();
        let trace = run(&s, Strategy::Micc { dwell: 1 }, 30).unwrap();
        let replayed = replay_states(&s, &trace.events);
        let actual: Vec<(UserId, UserState)> = trace.final_users.iter().map(|u| (u.id, u.state)).collect();
        assert_eq!(replayed, actual);
    }

    #[test]
    fn rejects_bad_strategies() {
        let s = Scenario::table1();
        assert!(SimState::new(&s, Strategy::Micc { dwell: 0 }).is_err());
        assert!(SimState::new(&s, Strategy::Fixed { price: f64::NAN }).is_err());
    }

    #[test]
    fn levels_group_ticks() {
        let s = Scenario::table1();
        let trace = run(&s, Strategy::Progressive { dwell: 3 }, 12).unwrap();
        let levels = trace.levels();
        assert_eq!(levels[0].price, LinkPrice::Finite(2.0));
        assert!(levels.windows(2).all(|w| w[0].price.value() < w[1].price.value()));
        assert!(trace.candidate_csv().unwrap().starts_with("candidate_index,price,load_AB"));
        assert!(trace.summary_csv().unwrap().starts_with("tick,price_AB,total_flow"));
    }
}
