from opentelemetry import trace
from opentelemetry.sdk.resources import SERVICE_NAME, Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor

from iss_lab.config import SETTINGS

resource = Resource(attributes={
    SERVICE_NAME: "iss-lab"
})

provider = TracerProvider(resource=resource)
trace.set_tracer_provider(provider)
if SETTINGS.OTLP_ENDPOINT:
    from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter

    provider.add_span_processor(
        BatchSpanProcessor(OTLPSpanExporter(endpoint=SETTINGS.OTLP_ENDPOINT))
    )
tracer = trace.get_tracer(__name__)
