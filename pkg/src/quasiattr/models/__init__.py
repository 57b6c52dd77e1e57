from .base import ConstructionError, SmoothMap, jacobian_check
from .solenoid import Braid, canonical_solenoid, circle_braid, validate_separation
from .psi import PsiProfile, build_psi
from .diskmaps import DiskMapModel, homothety_model, plykin_model, shear_model
from .realize import realize_disk_map

__all__ = ["ConstructionError", "SmoothMap", "jacobian_check", "Braid", "canonical_solenoid",
           "circle_braid", "validate_separation", "PsiProfile", "build_psi", "DiskMapModel",
           "homothety_model", "plykin_model", "shear_model", "realize_disk_map"]
