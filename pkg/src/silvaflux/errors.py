"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input/parse problems exit 2,
reconciliation infeasibility exits 3, scenario application errors exit 4.
"""


class SilvafluxError(Exception):
    """Base class for all package errors."""


class ParseError(SilvafluxError):
    """An input file is malformed; message names the file and row."""


class UnknownProduct(SilvafluxError):
    """A product id is missing from the conversion table."""


class NegativeQuantity(SilvafluxError):
    """A quantity or volume that must be nonnegative is negative."""


class UnbalancedInputs(SilvafluxError):
    """Supply and consumption+exports disagree beyond tolerance."""


class UnresolvedTarget(SilvafluxError):
    """An observation target matches no flow in the template graph."""


class Infeasible(SilvafluxError):
    """The balance + nonnegativity system admits no solution."""


class ZeroReference(SilvafluxError):
    """Delta percent requested against a nonpositive reference value."""


class EmptyGraph(SilvafluxError):
    """An operation that needs flows was given a graph without any."""


class NegativeStock(SilvafluxError):
    """A carbon pool stock or inflow is negative."""


class UnclassifiedNode(SilvafluxError):
    """A terminal node has no destination class (energy/product/export)."""


class YearMismatch(SilvafluxError):
    """Two carbon ledgers cover different year ranges."""


class ScenarioError(SilvafluxError):
    """Base class for scenario application failures."""


class RerouteExceedsFlow(ScenarioError):
    """Requested reroute amount exceeds the available flow quantity."""


class UnknownEndpoint(ScenarioError):
    """An edit references a node or flow that does not exist."""


class CapExceeded(ScenarioError):
    """Inbound volume implies more extractive mass than the deposit cap."""


class UnbalancedResult(ScenarioError):
    """Applying the edits left a transformer out of balance."""
