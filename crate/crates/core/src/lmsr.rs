//! Binary-option market maker using the logarithmic market scoring rule.
//!
//! The maker holds the cost potential `C(q) = b ln(exp(q_yes/b) + exp(q_no/b))`.
//! Every order moves exactly one share and is charged `C(q') - C(q)`, so a
//! sell refunds the same potential difference a buy would have charged.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Outcome;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TradeError {
    #[error("insufficient cash: order costs {cost:.4}, account holds {available:.4}")]
    InsufficientCash { cost: f64, available: f64 },
    #[error("insufficient holdings: no `{side}` shares to sell")]
    InsufficientHoldings { side: Side },
    #[error("market already settled")]
    AlreadySettled,
    #[error("order owner {order} does not match account owner {account}")]
    OwnerMismatch { order: Owner, account: Owner },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Yes,
    No,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Yes => Side::No,
            Side::No => Side::Yes,
        }
    }

    /// The side that pays out under `outcome`.
    pub fn winning(outcome: Outcome) -> Side {
        match outcome {
            Outcome::Replicated => Side::Yes,
            Outcome::NotReplicated => Side::No,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Side::Yes => "yes",
            Side::No => "no",
        })
    }
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "replicate" | "will-replicate" => Ok(Side::Yes),
            "no" | "not-replicate" | "will-not-replicate" => Ok(Side::No),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Buy,
    Sell,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Action::Buy => "buy",
            Action::Sell => "sell",
        })
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "buy" => Ok(Action::Buy),
            "sell" => Ok(Action::Sell),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

/// Who placed an order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Agent(u32),
    Human(String),
}

impl Owner {
    pub fn is_agent(&self) -> bool {
        matches!(self, Owner::Agent(_))
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Agent(id) => f.pad(&format!("agent:{id}")),
            Owner::Human(id) => f.pad(&format!("human:{id}")),
        }
    }
}

/// A single-share order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub owner: Owner,
    pub side: Side,
    pub action: Action,
    pub tick_submitted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub order: Order,
    /// Change in the trader's cash; negative for buys.
    pub cash_delta: f64,
    /// Price of the yes contract after the trade.
    pub spot_price_after: f64,
    pub tick_executed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub owner: Owner,
    pub cash: f64,
    pub holdings_yes: u32,
    pub holdings_no: u32,
    pub trade_count: u32,
}

impl Account {
    pub fn new(owner: Owner, cash: f64) -> Self {
        Self {
            owner,
            cash,
            holdings_yes: 0,
            holdings_no: 0,
            trade_count: 0,
        }
    }

    pub fn holdings(&self, side: Side) -> u32 {
        match side {
            Side::Yes => self.holdings_yes,
            Side::No => self.holdings_no,
        }
    }

    fn holdings_mut(&mut self, side: Side) -> &mut u32 {
        match side {
            Side::Yes => &mut self.holdings_yes,
            Side::No => &mut self.holdings_no,
        }
    }
}

/// `b ln(exp(x/b) + exp(y/b))`, shifted by the larger exponent.
pub fn cost_potential(q_yes: f64, q_no: f64, liquidity: f64) -> f64 {
    let m = q_yes.max(q_no);
    m + liquidity * ((-(q_yes - q_no).abs() / liquidity).exp()).ln_1p()
}

/// Logistic form of the yes price; stable for large quantity gaps.
fn price_yes(q_yes: f64, q_no: f64, liquidity: f64) -> f64 {
    let d = (q_yes - q_no) / liquidity;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// LMSR state of one binary market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub q_yes: f64,
    pub q_no: f64,
    pub liquidity: f64,
    pub tick: u64,
    pub log: Vec<Trade>,
    pub settled: Option<Outcome>,
}

impl MarketState {
    /// Opens a market with no outstanding shares.
    ///
    /// # Panics
    /// Panics unless `liquidity` is finite and positive.
    pub fn new(liquidity: f64) -> Self {
        assert!(
            liquidity.is_finite() && liquidity > 0.0,
            "liquidity must be positive, got {liquidity}"
        );
        Self {
            q_yes: 0.0,
            q_no: 0.0,
            liquidity,
            tick: 0,
            log: Vec::new(),
            settled: None,
        }
    }

    pub fn with_quantities(liquidity: f64, q_yes: f64, q_no: f64) -> Self {
        Self {
            q_yes,
            q_no,
            ..Self::new(liquidity)
        }
    }

    pub fn potential(&self) -> f64 {
        cost_potential(self.q_yes, self.q_no, self.liquidity)
    }

    pub fn spot_price(&self, side: Side) -> f64 {
        match side {
            Side::Yes => price_yes(self.q_yes, self.q_no, self.liquidity),
            Side::No => price_yes(self.q_no, self.q_yes, self.liquidity),
        }
    }

    /// Cost of moving one share on `side`; sells come back negative.
    ///
    /// Evaluated as `b ln(1 + p (exp(±1/b) - 1))`, which equals the potential
    /// difference without cancelling two large potentials.
    pub fn trade_cost(&self, side: Side, action: Action) -> f64 {
        let p = self.spot_price(side);
        let step = match action {
            Action::Buy => 1.0,
            Action::Sell => -1.0,
        };
        self.liquidity * (p * (step / self.liquidity).exp_m1()).ln_1p()
    }

    fn shift(&mut self, side: Side, delta: f64) {
        match side {
            Side::Yes => self.q_yes += delta,
            Side::No => self.q_no += delta,
        }
    }

    /// Executes one order against `account`. On error nothing changes.
    pub fn execute(&mut self, account: &mut Account, order: &Order) -> Result<Trade, TradeError> {
        if self.settled.is_some() {
            return Err(TradeError::AlreadySettled);
        }
        if account.owner != order.owner {
            return Err(TradeError::OwnerMismatch {
                order: order.owner.clone(),
                account: account.owner.clone(),
            });
        }
        let cost = self.trade_cost(order.side, order.action);
        match order.action {
            Action::Buy => {
                if account.cash < cost {
                    return Err(TradeError::InsufficientCash {
                        cost,
                        available: account.cash,
                    });
                }
                *account.holdings_mut(order.side) += 1;
                self.shift(order.side, 1.0);
            }
            Action::Sell => {
                if account.holdings(order.side) == 0 {
                    return Err(TradeError::InsufficientHoldings { side: order.side });
                }
                *account.holdings_mut(order.side) -= 1;
                self.shift(order.side, -1.0);
            }
        }
        account.cash -= cost;
        account.trade_count += 1;
        let trade = Trade {
            order: order.clone(),
            cash_delta: -cost,
            spot_price_after: self.spot_price(Side::Yes),
            tick_executed: self.tick,
        };
        self.log.push(trade.clone());
        Ok(trade)
    }

    pub fn advance_tick(&mut self) {
        self.tick += 1;
    }

    /// Pays $1 per winning share, zeroes holdings and returns each payout.
    pub fn settle<'a, I>(&mut self, accounts: I, outcome: Outcome) -> Result<Vec<f64>, TradeError>
    where
        I: IntoIterator<Item = &'a mut Account>,
    {
        if self.settled.is_some() {
            return Err(TradeError::AlreadySettled);
        }
        self.settled = Some(outcome);
        let winner = Side::winning(outcome);
        Ok(accounts
            .into_iter()
            .map(|acct| {
                let payout = f64::from(acct.holdings(winner));
                acct.cash += payout;
                acct.holdings_yes = 0;
                acct.holdings_no = 0;
                payout
            })
            .collect())
    }

    /// Cash the maker has taken in across the log.
    pub fn collected(&self) -> f64 {
        self.log.iter().map(|t| -t.cash_delta).sum()
    }

    /// Net shares issued on `side` through the log.
    pub fn issued(&self, side: Side) -> i64 {
        self.log
            .iter()
            .filter(|t| t.order.side == side)
            .map(|t| match t.order.action {
                Action::Buy => 1,
                Action::Sell => -1,
            })
            .sum()
    }

    /// Maker profit if the market resolves to `outcome`.
    pub fn maker_profit(&self, outcome: Outcome) -> f64 {
        self.collected() - self.issued(Side::winning(outcome)) as f64
    }

    /// Worst-case maker loss for a binary market opened at equal quantities.
    pub fn loss_bound(&self) -> f64 {
        self.liquidity * std::f64::consts::LN_2
    }
}

/// One line of the JSON-lines trade log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeLogEntry {
    pub owner: Owner,
    pub side: Side,
    pub action: Action,
    pub cost: f64,
    pub price_after: f64,
    pub tick: u64,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

impl TradeLogEntry {
    pub fn new(trade: &Trade, timestamp_ms: u64) -> Self {
        Self {
            owner: trade.order.owner.clone(),
            side: trade.order.side,
            action: trade.order.action,
            cost: -trade.cash_delta,
            price_after: trade.spot_price_after,
            tick: trade.tick_executed,
            timestamp_ms,
        }
    }
}

pub fn write_trade_log<W: Write>(
    mut out: W,
    trades: &[Trade],
    timestamp_ms: impl Fn(&Trade) -> u64,
) -> std::io::Result<()> {
    for t in trades {
        serde_json::to_writer(&mut out, &TradeLogEntry::new(t, timestamp_ms(t)))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
