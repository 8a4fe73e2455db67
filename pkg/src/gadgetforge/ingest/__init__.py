from .adapters import load_listing, register_adapter, registered_adapters, unregister_adapter
from .lexer import tokenize
from .model import AnalysisBundle, PseudoFunction, PseudoModule, StructuralReport
from .parser import parse_pseudocode
from .printer import format_module, format_statement
from .structure import analyze_structure, bundle_to_json, combine_analyses

__all__ = [
    "AnalysisBundle",
    "PseudoFunction",
    "PseudoModule",
    "StructuralReport",
    "analyze_structure",
    "bundle_to_json",
    "combine_analyses",
    "format_module",
    "format_statement",
    "load_listing",
    "parse_pseudocode",
    "register_adapter",
    "registered_adapters",
    "tokenize",
    "unregister_adapter",
]
