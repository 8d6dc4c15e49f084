"""Tools for a wearable ECG/accelerometer monitor and its companion services.

Submodules: ``wire`` (packet codec), ``ats`` (recording files),
``telemetry`` (scaling, heart rate, fall detection), ``ecg_id`` (ECG
biometrics), ``badge`` (RFID card formats), ``rc4`` and ``archive``
(encrypted tree archive), ``gateway`` (stream forwarder), ``access``
(badge session) and ``cli``.
"""

from .errors import VitalwireError

__version__ = "0.1.0"

__all__ = ["VitalwireError", "__version__"]
