//! Per-user capital containers: owner/operator split and average-cost
//! portfolio accounting.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mandate::{MandateError, MandateLog, SliderConfig, Strategy};
use crate::market::{execute_swap, quote_sell, EthDelta, MarketError, MarketSnapshot, Pool, SwapResult, TokenId, TradeSide};
use crate::units::{mul_div, Eth, Price, Tokens, SCALE};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VaultId(pub u32);

impl fmt::Display for VaultId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub balance: Tokens,
    pub avg_entry_price: Price,
    /// Fee-inclusive ETH cost of the current balance.
    pub cost_basis: Eth,
    pub first_acquired_at: Tick,
    pub last_trade_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vault {
    pub id: VaultId,
    pub owner: String,
    pub eth_balance: Eth,
    pub positions: BTreeMap<TokenId, Position>,
    pub paused: bool,
    pub closed: bool,
    pub activated_at: Tick,
    /// Total funded minus total withdrawn.
    pub net_funded: EthDelta,
    pub realized_pnl: EthDelta,
    pub fees_paid: Eth,
    pub last_swap_at: Option<Tick>,
}

/// Who is issuing a command against a vault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Actor {
    Owner(String),
    /// The agent side: may only submit swaps.
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OwnerAction {
    Fund { eth: Eth },
    WithdrawUnallocated { eth: Eth },
    UpdateSliders { sliders: SliderConfig },
    UpdateStrategies { strategies: Vec<Strategy> },
    Pause,
    Unpause,
    Close,
    EmergencyLiquidate,
}

/// Every capability a vault exposes, for permission checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capability {
    SubmitSwap,
    Fund,
    WithdrawUnallocated,
    UpdateSliders,
    UpdateStrategies,
    Pause,
    Unpause,
    Close,
    EmergencyLiquidate,
}

impl Capability {
    pub const ALL: [Capability; 9] = [
        Capability::SubmitSwap,
        Capability::Fund,
        Capability::WithdrawUnallocated,
        Capability::UpdateSliders,
        Capability::UpdateStrategies,
        Capability::Pause,
        Capability::Unpause,
        Capability::Close,
        Capability::EmergencyLiquidate,
    ];
}

impl OwnerAction {
    pub fn capability(&self) -> Capability {
        match self {
            OwnerAction::Fund { .. } => Capability::Fund,
            OwnerAction::WithdrawUnallocated { .. } => Capability::WithdrawUnallocated,
            OwnerAction::UpdateSliders { .. } => Capability::UpdateSliders,
            OwnerAction::UpdateStrategies { .. } => Capability::UpdateStrategies,
            OwnerAction::Pause => Capability::Pause,
            OwnerAction::Unpause => Capability::Unpause,
            OwnerAction::Close => Capability::Close,
            OwnerAction::EmergencyLiquidate => Capability::EmergencyLiquidate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VaultError {
    #[error("only the vault owner may {0:?}")]
    NotOwner(Capability),
    #[error("the owner cannot submit swaps; trading is delegated to the operator")]
    NotOperator,
    #[error("vault {0} is closed")]
    VaultClosed(VaultId),
    #[error("withdraw of {requested} exceeds unallocated balance {available}")]
    InsufficientUnallocated { requested: Eth, available: Eth },
    #[error(transparent)]
    Mandate(#[from] MandateError),
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// Side effects of an owner action beyond the vault's own fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OwnerOutcome {
    pub liquidations: Vec<SwapResult>,
    /// Tokens whose sale rounded to zero ETH and were written off.
    pub written_off: Vec<(TokenId, Tokens)>,
    pub committed_version: Option<u64>,
}

/// Checks a capability against the permission split: the owner holds
/// everything except swap submission, the operator holds only that.
pub fn authorize(actor: &Actor, vault: &Vault, cap: Capability) -> Result<(), VaultError> {
    match (actor, cap) {
        (Actor::Operator, Capability::SubmitSwap) => Ok(()),
        (Actor::Operator, other) => Err(VaultError::NotOwner(other)),
        (Actor::Owner(_), Capability::SubmitSwap) => Err(VaultError::NotOperator),
        (Actor::Owner(who), other) if *who != vault.owner => Err(VaultError::NotOwner(other)),
        (Actor::Owner(_), _) => Ok(()),
    }
}

impl Vault {
    pub fn new(id: VaultId, owner: impl Into<String>, activated_at: Tick) -> Self {
        Vault {
            id,
            owner: owner.into(),
            eth_balance: Eth::ZERO,
            positions: BTreeMap::new(),
            paused: false,
            closed: false,
            activated_at,
            net_funded: EthDelta::default(),
            realized_pnl: EthDelta::default(),
            fees_paid: Eth::ZERO,
            last_swap_at: None,
        }
    }

    pub fn position(&self, token: &TokenId) -> Option<&Position> {
        self.positions.get(token)
    }

    pub fn is_active(&self, now: Tick) -> bool {
        !self.paused && !self.closed && now >= self.activated_at && (self.net_funded.0 > 0 || !self.positions.is_empty())
    }

    /// `eth - net_funded + sum(cost_basis) - realized`, which average-cost
    /// accounting keeps at exactly zero. Equivalent to
    /// `realized + unrealized == mark_to_market - net_funded` at any prices.
    pub fn accounting_residual(&self) -> i128 {
        let cost: Eth = self.positions.values().map(|p| p.cost_basis).sum();
        EthDelta::of(self.eth_balance).0 - self.net_funded.0 + EthDelta::of(cost).0 - self.realized_pnl.0
    }

    /// Books a settled swap. The guard has already established that the
    /// vault can afford it; violations here are internal bugs.
    pub fn apply_settlement(&mut self, result: &SwapResult, now: Tick) -> Option<EthDelta> {
        self.fees_paid += result.fee.total();
        self.last_swap_at = Some(now);
        match result.side {
            TradeSide::Buy => {
                self.eth_balance = self.eth_balance.checked_sub(result.eth_amount).expect("settled buy exceeds vault balance");
                self.add_tokens(&result.token, result.token_amount, result.eth_amount, now);
                None
            }
            TradeSide::Sell => {
                let pos = self.positions.get_mut(&result.token).expect("settled sell without position");
                assert!(result.token_amount <= pos.balance, "settled sell exceeds position");
                let cost_removed = if result.token_amount == pos.balance {
                    pos.cost_basis
                } else {
                    Eth(mul_div(pos.cost_basis.raw(), result.token_amount.raw(), pos.balance.raw()))
                };
                pos.balance -= result.token_amount;
                pos.cost_basis -= cost_removed;
                pos.last_trade_at = now;
                if pos.balance.is_zero() {
                    self.positions.remove(&result.token);
                }
                self.eth_balance += result.eth_amount;
                let pnl = EthDelta::of(result.eth_amount) - EthDelta::of(cost_removed);
                self.realized_pnl += pnl;
                Some(pnl)
            }
        }
    }

    /// Adds tokens acquired for `cost`, updating the quantity-weighted
    /// average entry. Only acquisitions move the average.
    pub fn add_tokens(&mut self, token: &TokenId, amount: Tokens, cost: Eth, now: Tick) {
        if amount.is_zero() {
            // nothing to hold the cost against
            self.realized_pnl = self.realized_pnl - EthDelta::of(cost);
            return;
        }
        match self.positions.get_mut(token) {
            Some(pos) => {
                let carried = mul_div(pos.balance.raw(), pos.avg_entry_price.raw(), SCALE);
                pos.balance += amount;
                pos.avg_entry_price = Price(mul_div(carried + cost.raw(), SCALE, pos.balance.raw()).max(1));
                pos.cost_basis += cost;
                pos.last_trade_at = now;
            }
            None => {
                self.positions.insert(
                    token.clone(),
                    Position {
                        balance: amount,
                        avg_entry_price: Price(mul_div(cost.raw(), SCALE, amount.raw()).max(1)),
                        cost_basis: cost,
                        first_acquired_at: now,
                        last_trade_at: now,
                    },
                );
            }
        }
    }

    /// Removes a position entirely, returning it. Its cost basis is not
    /// realized; callers that destroy value must book it themselves.
    pub fn take_position(&mut self, token: &TokenId) -> Option<Position> {
        self.positions.remove(token)
    }

    /// Writes a position off at zero proceeds.
    pub fn write_off(&mut self, token: &TokenId) -> Option<Tokens> {
        let pos = self.positions.remove(token)?;
        self.realized_pnl = self.realized_pnl - EthDelta::of(pos.cost_basis);
        Some(pos.balance)
    }
}

/// Applies an owner-issued action. Slider and strategy updates append a
/// new commit to the vault's mandate log; liquidation sells every position
/// through its pool at market and then pauses the vault.
pub fn apply_owner_action(
    vault: &mut Vault,
    actor: &Actor,
    action: &OwnerAction,
    mandate: &mut MandateLog,
    pools: &mut BTreeMap<TokenId, Pool>,
    now: Tick,
) -> Result<OwnerOutcome, VaultError> {
    authorize(actor, vault, action.capability())?;
    if vault.closed {
        return match action {
            OwnerAction::Close => Ok(OwnerOutcome::default()),
            _ => Err(VaultError::VaultClosed(vault.id)),
        };
    }
    let mut outcome = OwnerOutcome::default();
    match action {
        OwnerAction::Fund { eth } => {
            vault.eth_balance += *eth;
            vault.net_funded += EthDelta::of(*eth);
        }
        OwnerAction::WithdrawUnallocated { eth } => {
            if *eth > vault.eth_balance {
                return Err(VaultError::InsufficientUnallocated { requested: *eth, available: vault.eth_balance });
            }
            vault.eth_balance -= *eth;
            vault.net_funded = vault.net_funded - EthDelta::of(*eth);
        }
        OwnerAction::UpdateSliders { sliders } => {
            let strategies = mandate.latest().map(|c| c.strategies.clone()).unwrap_or_default();
            outcome.committed_version = Some(mandate.commit(*sliders, strategies, now)?);
        }
        OwnerAction::UpdateStrategies { strategies } => {
            let sliders = mandate.latest().map(|c| c.sliders).unwrap_or_default();
            outcome.committed_version = Some(mandate.commit(sliders, strategies.clone(), now)?);
        }
        OwnerAction::Pause => vault.paused = true,
        OwnerAction::Unpause => vault.paused = false,
        OwnerAction::Close => {
            vault.closed = true;
            vault.paused = true;
        }
        OwnerAction::EmergencyLiquidate => {
            let held: Vec<TokenId> = vault.positions.keys().cloned().collect();
            for token in held {
                let balance = vault.positions[&token].balance;
                let sold = pools.get_mut(&token).and_then(|pool| {
                    let q = quote_sell(pool, balance).ok()?;
                    execute_swap(pool, &q).ok()
                });
                match sold {
                    Some(result) => {
                        vault.apply_settlement(&result, now);
                        outcome.liquidations.push(result);
                    }
                    None => {
                        if let Some(amount) = vault.write_off(&token) {
                            outcome.written_off.push((token, amount));
                        }
                    }
                }
            }
            vault.paused = true;
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionView {
    pub token: TokenId,
    pub symbol: String,
    pub balance: Tokens,
    pub avg_entry_price: Price,
    pub spot: Price,
    pub value: Eth,
    /// `(spot - avg_entry) / avg_entry` as a percentage.
    pub unrealized_pnl_pct: f64,
    pub time_held: u64,
    pub last_trade_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioContext {
    pub eth_balance: Eth,
    pub positions: Vec<PositionView>,
    pub token_value: Eth,
    pub total_value: Eth,
    pub deployment_fraction: f64,
    pub last_swap_at: Option<Tick>,
    pub activated_at: Tick,
}

impl PortfolioContext {
    pub fn position(&self, token: &TokenId) -> Option<&PositionView> {
        self.positions.iter().find(|p| &p.token == token)
    }
}

/// Marks a vault to the snapshot's spot prices. Positions in tokens absent
/// from the snapshot are valued at zero and omitted.
pub fn portfolio_view(vault: &Vault, snapshot: &MarketSnapshot, now: Tick) -> PortfolioContext {
    let mut positions = Vec::new();
    let mut token_value = Eth::ZERO;
    for (token, pos) in &vault.positions {
        let Some(row) = snapshot.row(token) else { continue };
        let value = row.price.value_of(pos.balance);
        token_value += value;
        let avg = pos.avg_entry_price.raw() as f64;
        positions.push(PositionView {
            token: token.clone(),
            symbol: row.symbol.clone(),
            balance: pos.balance,
            avg_entry_price: pos.avg_entry_price,
            spot: row.price,
            value,
            unrealized_pnl_pct: (row.price.raw() as f64 - avg) / avg * 100.0,
            time_held: now.saturating_sub(pos.first_acquired_at),
            last_trade_at: pos.last_trade_at,
        });
    }
    let total_value = token_value + vault.eth_balance;
    let deployment_fraction = if total_value.is_zero() { 0.0 } else { token_value.raw() as f64 / total_value.raw() as f64 };
    PortfolioContext {
        eth_balance: vault.eth_balance,
        positions,
        token_value,
        total_value,
        deployment_fraction,
        last_swap_at: vault.last_swap_at,
        activated_at: vault.activated_at,
    }
}
