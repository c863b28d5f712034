//! Renegotiable contract menus for federated-learning incentive simulation.
//!
//! A data coordinator screens data owners of unknown type with a menu of
//! (reward, effort) contracts, updates its type beliefs from delivered
//! effort, and mid-task renegotiates the menu against the remaining budget.
//! The crate is generic over the scalar type; the `f64` aliases below cover
//! the common case.

pub mod agent;
pub mod belief;
pub mod contract;
pub mod cost;
pub mod learning;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use scalar::Real;

pub type DOTypeProfile = contract::DOTypeProfile<f64>;
pub type TypeLadder = contract::TypeLadder<f64>;
pub type ContractItem = contract::ContractItem<f64>;
pub type ContractMenu = contract::ContractMenu<f64>;
pub type EffortGrid = contract::EffortGrid<f64>;
pub type RevenueModel = contract::RevenueModel<f64>;
pub type TypeBelief = belief::TypeBelief<f64>;
pub type LikelihoodModel = belief::LikelihoodModel<f64>;
pub type Observation = belief::Observation<f64>;
pub type CommProfile = cost::CommProfile<f64>;
pub type ComputeProfile = cost::ComputeProfile<f64>;
pub type CostParams = cost::CostParams<f64>;
pub type DOAgent = agent::DOAgent<f64>;
pub type Behavior = agent::Behavior<f64>;
pub type DeliveredEffort = agent::DeliveredEffort<f64>;
pub type GlobalModelState = learning::GlobalModelState<f64>;
pub type ProgressModel = learning::ProgressModel<f64>;
