"""
Excepciones del proyecto.

Todas heredan de TbesError y además del built-in que refinan, así el
código que ya atrapa ValueError/KeyError sigue funcionando.
"""


class TbesError(Exception):
    """Error base de la librería"""


class ConfigError(TbesError, ValueError):
    """Variable de entorno con un valor inválido"""


class ImageFormatError(TbesError, ValueError):
    """Archivo ilegible, profundidad de bits o canales no soportados"""


class ColorSpaceError(TbesError, ValueError):
    """Conversión de espacio de color no soportada"""


class DegenerateRegionError(TbesError, ValueError):
    """Región sin píxeles interiores para el tamaño de ventana pedido"""


class NotPositiveSemidefiniteError(TbesError, ValueError):
    """La factorización simétrica falló: covarianza no PSD"""


class RegionError(TbesError, KeyError):
    """Región inexistente, desconectada o par de regiones no adyacentes"""

    def __str__(self):
        # KeyError pone comillas alrededor del mensaje
        return str(self.args[0]) if self.args else ""


class NonConvexFitError(TbesError, ValueError):
    """Ajuste cuadrático con a <= 0"""


class TrainingError(TbesError, ValueError):
    """Conjunto de entrenamiento vacío o inutilizable"""


class TracingError(TbesError, RuntimeError):
    """El seguimiento de contorno no cerró"""


class ObjectiveError(TbesError, RuntimeError):
    """Una fusión no bajó la longitud de código total en ΔL"""
