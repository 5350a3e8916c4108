use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use super::context::ThreadContext;
use super::error::{CreateError, ThreadError};
use crate::datadesc::{ArgEnv, DataDescription, DescribeError, Describer};
use crate::value::{ChannelValue, ParamType, TypeCode};

pub type ThreadBody = dyn Fn(&mut ThreadContext<'_>) -> Result<(), ThreadError> + Send + Sync;

/// A thread function and its channel signature.
///
/// Argument slots are numbered shareds first, then globals; data
/// descriptions address arguments by that slot number.
#[derive(Clone)]
pub struct ThreadFunction {
    name: String,
    shareds: Vec<ParamType>,
    globals: Vec<ParamType>,
    body: Arc<ThreadBody>,
    description: Option<DataDescription>,
}

impl ThreadFunction {
    pub fn new<F>(name: &str, body: F) -> ThreadFunction
    where
        F: Fn(&mut ThreadContext<'_>) -> Result<(), ThreadError> + Send + Sync + 'static,
    {
        ThreadFunction {
            name: name.to_owned(),
            shareds: Vec::new(),
            globals: Vec::new(),
            body: Arc::new(body),
            description: None,
        }
    }

    pub fn shared(mut self, ty: TypeCode) -> Self {
        self.shareds.push(ParamType::Scalar(ty));
        self
    }

    pub fn global(mut self, ty: TypeCode) -> Self {
        self.globals.push(ParamType::Scalar(ty));
        self
    }

    pub fn global_buffer(mut self, element_type: TypeCode) -> Self {
        self.globals.push(ParamType::Buffer(element_type));
        self
    }

    pub fn shared_param(mut self, ty: ParamType) -> Self {
        self.shareds.push(ty);
        self
    }

    /// Attaches a data description, which makes the function distributable.
    pub fn describe<F>(mut self, evaluator: F) -> Self
    where
        F: Fn(&ArgEnv, &mut Describer<'_>) -> Result<(), DescribeError> + Send + Sync + 'static,
    {
        self.description = Some(DataDescription::new(&self.name, evaluator));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shared_params(&self) -> &[ParamType] {
        &self.shareds
    }

    pub fn global_params(&self) -> &[ParamType] {
        &self.globals
    }

    pub fn description(&self) -> Option<&DataDescription> {
        self.description.as_ref()
    }

    pub fn is_distributable(&self) -> bool {
        self.description.is_some()
    }

    pub(crate) fn body(&self) -> &ThreadBody {
        &*self.body
    }

    pub(crate) fn check_args(&self, shareds: &[ChannelValue], globals: &[ChannelValue]) -> Result<(), CreateError> {
        let groups = [("shared", &self.shareds, shareds), ("global", &self.globals, globals)];
        for (kind, declared, given) in groups {
            if declared.len() != given.len() {
                return Err(CreateError::ArityMismatch {
                    function: self.name.clone(),
                    kind,
                    expected: declared.len(),
                    actual: given.len(),
                });
            }
            for (slot, (want, got)) in declared.iter().zip(given).enumerate() {
                if *want != got.param_type() {
                    return Err(CreateError::ArgumentType {
                        function: self.name.clone(),
                        kind,
                        slot,
                        expected: *want,
                        actual: got.param_type(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for ThreadFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThreadFunction")
            .field("name", &self.name)
            .field("shareds", &self.shareds)
            .field("globals", &self.globals)
            .field("distributable", &self.is_distributable())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("thread function {0:?} is already registered")]
    Duplicate(String),
}

/// Thread functions creatable by name on a node.
#[derive(Default)]
pub struct FunctionRegistry {
    functions: RwLock<BTreeMap<String, Arc<ThreadFunction>>>,
}

impl FunctionRegistry {
    pub fn new() -> FunctionRegistry {
        FunctionRegistry::default()
    }

    pub fn register(&self, function: ThreadFunction) -> Result<(), RegistryError> {
        let mut map = self.functions.write().unwrap();
        if map.contains_key(function.name()) {
            return Err(RegistryError::Duplicate(function.name().to_owned()));
        }
        map.insert(function.name().to_owned(), Arc::new(function));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<ThreadFunction>> {
        self.functions.read().unwrap().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.functions.read().unwrap().keys().cloned().collect()
    }
}

impl fmt::Debug for FunctionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
