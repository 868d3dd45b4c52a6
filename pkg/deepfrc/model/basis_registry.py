"""Basis family registry for mapping family names to basis implementations.

This module provides a central registry that maps basis family names (as used
by ``TrainConfig.basis``) to ``BasisFamily`` classes. This enables:
- Swapping the spectral basis without touching the model code
- External packages to register their own basis families
- Configuration-based selection of the default family
"""

import importlib
import logging
import typing as t
from importlib.metadata import entry_points

from traitlets import Unicode
from traitlets.config import SingletonConfigurable

from ..errors import ConfigError
from .spectral import BasisFamily, BasisSet, FourierBasis, GridLike

logger = logging.getLogger(__name__)

ENTRY_POINT_GROUP = "deepfrc_basis"


def _import_class(reference: str) -> t.Type[BasisFamily]:
    if ":" in reference:
        module_name, class_name = reference.rsplit(":", 1)
    else:
        module_name, class_name = reference.rsplit(".", 1)
    module = importlib.import_module(module_name)
    return getattr(module, class_name)


class BasisRegistry(SingletonConfigurable):
    """Central registry (singleton) for spectral basis families.

    Families can be registered in three ways:

    1. Programmatic registration via register()
    2. Dotted-path registration via register_from_string()
    3. Entry point discovery via auto_discover_registrations()

    Fourier is always available under the name ``"fourier"``.

    Example usage:
        BasisRegistry.register("legendre", LegendreBasis)
        basis = BasisRegistry.instance().build("legendre", K=12, grid=grid)
    """

    default_family = Unicode(
        "fourier",
        config=True,
        help="""
        Basis family used when a caller does not name one.

            c.BasisRegistry.default_family = "fourier"
        """,
    )

    _registry: t.Dict[str, t.Type[BasisFamily]] = {}

    def __init__(self, **kwargs: t.Any) -> None:
        super().__init__(**kwargs)
        if FourierBasis.name not in self._registry:
            self.register(FourierBasis.name, FourierBasis)
        self.auto_discover_registrations()

    @classmethod
    def register(cls, name: str, family_class: t.Type[BasisFamily]) -> None:
        """Register a basis family under ``name``.

        Parameters
        ----------
        name : str
            Family name used in configuration (``TrainConfig.basis``)
        family_class : Type[BasisFamily]
            Class implementing ``evaluate(K, points)``
        """
        if not (isinstance(family_class, type) and issubclass(family_class, BasisFamily)):
            raise ConfigError(f"{family_class!r} is not a BasisFamily subclass")
        cls._registry[name] = family_class
        logger.info(f"Registered basis family {family_class.__name__} as {name!r}")

    @classmethod
    def register_from_string(cls, name: str, class_reference: str) -> None:
        """Register a family from a 'module.Class' or 'module:Class' reference.

        Raises
        ------
        ImportError
            If the module cannot be imported
        AttributeError
            If the class name is not found in the module
        """
        try:
            cls.register(name, _import_class(class_reference))
        except (ImportError, AttributeError) as e:
            logger.error(f"Failed to register basis family {name} -> {class_reference}: {e}")
            raise

    def get_family(self, name: t.Optional[str] = None) -> BasisFamily:
        """Return an instance of the family registered as ``name`` (or the default)."""
        name = name or self.default_family
        if name not in self._registry:
            raise ConfigError(f"unknown basis family {name!r}; registered: {sorted(self._registry)}")
        return self._registry[name]()

    def build(self, name: t.Optional[str], K: int, grid: GridLike) -> BasisSet:
        return self.get_family(name).build(K, grid)

    @classmethod
    def get_registered_families(cls) -> t.Dict[str, str]:
        """Registered family names mapped to 'module.Class' strings."""
        return {name: f"{family.__module__}.{family.__name__}" for name, family in cls._registry.items()}

    @classmethod
    def clear_registry(cls) -> None:
        """Clear all registered families. Primarily useful for testing."""
        cls._registry.clear()
        logger.info("Cleared basis registry")

    def auto_discover_registrations(self) -> None:
        """Register families advertised in the ``deepfrc_basis`` entry-point group.

        The entry point name is the family name and its value the class:

        ```toml
        [project.entry-points.deepfrc_basis]
        legendre = "my_package.bases:LegendreBasis"
        ```
        """
        try:
            eps = entry_points(group=ENTRY_POINT_GROUP)
            if not eps:
                self.log.debug(f"No entry points found for {ENTRY_POINT_GROUP!r}")
                return
            self.log.info(f"Discovering basis families from {len(eps)} entry points")
            for entry_point in eps:
                try:
                    self.register(entry_point.name, entry_point.load())
                except Exception as e:
                    self.log.warning(
                        f"Failed to load entry point '{entry_point.name}' with value '{entry_point.value}': {e}"
                    )
        except Exception as e:
            logger.warning(f"Error during entry point discovery: {e}")


def get_registry(config: t.Optional[t.Any] = None) -> BasisRegistry:
    """Get the global basis registry singleton instance."""
    return BasisRegistry.instance(config=config)


def configure_registry(parent: t.Any) -> BasisRegistry:
    """Apply the configuration of ``parent`` (an Application) to the registry singleton."""
    if BasisRegistry.initialized():
        registry = BasisRegistry.instance()
        registry.update_config(parent.config)
        return registry
    return BasisRegistry.instance(parent=parent)


def build_basis(K: int, grid: GridLike, family: t.Optional[str] = None) -> BasisSet:
    return get_registry().build(family, K, grid)
